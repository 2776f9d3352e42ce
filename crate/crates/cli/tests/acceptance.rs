//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{campaign_id, ensemble_id, run_ids, run_ok, s};
use seedvote::adapter::{EpochScript, Script};
use seedvote::corpus::write_dataset;
use seedvote::ensemble::{Provenance, SourceKind};
use seedvote::hpo::{execute_search, SearchOutput, SearchSpace, Trial, TrialStatus};
use seedvote::registry::{read_jsonl, Registry};
use seedvote::runspec::RegimeSettings;
use seedvote::{
    load_dataset, majority_vote, precision_recall_f1, run_statistics, BackboneId, ConfusionMatrix, DatasetFormat,
    Example, Hyperparameters, Label, LabeledDataset, PredictionSet, RunConfig, ScriptedAdapter, SplitName, TiePolicy,
    Trainer,
};

const SIX_PLACES: f64 = 5e-7;

fn close(actual: f64, expected: f64) -> bool {
    (actual - expected).abs() < SIX_PLACES
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ---------------------------------------------------------------------------

fn metrics_vs_published() -> Result<String, String> {
    let cases = [
        (ConfusionMatrix::new(43, 3, 2, 0), (0.945055, 0.934783, 0.955556)),
        (ConfusionMatrix::new(43, 4, 2, 0), (0.934783, 0.914894, 0.955556)),
    ];
    for (cm, (f1, p, r)) in cases {
        let m = precision_recall_f1::<f64>(&cm);
        check(close(m.f1, f1) && close(m.precision, p) && close(m.recall, r), || {
            format!("{cm:?}: got ({:.6}, {:.6}, {:.6})", m.f1, m.precision, m.recall)
        })?;
    }
    Ok("both published rows reproduced".into())
}

// 2 ---------------------------------------------------------------------------

fn statistics_vs_published() -> Result<String, String> {
    // per-run F1 values of the three published campaigns
    let rows: [(&str, [f64; 3], f64, f64); 3] = [
        ("BioLinkBERT", [0.855019, 0.875969, 0.863159], 0.864716, 0.010561),
        ("RoBERTa", [0.931408, 0.945055, 0.931408], 0.935957, 0.007879),
        ("BERTweet", [0.940741, 0.934307, 0.933824], 0.936291, 0.003862),
    ];
    for (name, f1, mean, sd) in rows {
        let st = run_statistics(&f1);
        let got_sd = st.sd.ok_or_else(|| format!("{name}: no SD for 3 runs"))?;
        check(close(st.mean, mean) && close(got_sd, sd), || {
            format!("{name}: mean {:.6} sd {:.6}, expected {mean} {sd}", st.mean, got_sd)
        })?;
    }
    Ok("3 rows, sample (n-1) SD".into())
}

// 3 ---------------------------------------------------------------------------

fn member(id: usize, votes: &[bool]) -> PredictionSet {
    PredictionSet::new(
        format!("m{id}"),
        SplitName::Validation,
        (0..votes.len()).map(|i| format!("x{i}")).collect(),
        votes.iter().map(|&v| Label::from(v)).collect(),
        Provenance::now(SourceKind::Run),
    )
}

fn sets(raw: &[Vec<bool>]) -> Vec<PredictionSet> {
    raw.iter().enumerate().map(|(i, v)| member(i, v)).collect()
}

fn counting_oracle(raw: &[Vec<bool>], i: usize, policy: TiePolicy) -> Label {
    let ones = raw.iter().filter(|m| m[i]).count();
    let zeros = raw.len() - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => Label::Positive,
        std::cmp::Ordering::Less => Label::Negative,
        std::cmp::Ordering::Equal => Label::from(policy == TiePolicy::TieToOne),
    }
}

fn random_members(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<Vec<bool>> {
    let n = sizes[rng.gen_range(0..sizes.len())];
    let len = rng.gen_range(0..=12);
    (0..n).map(|_| (0..len).map(|_| rng.gen()).collect()).collect()
}

fn voting_oracle() -> Result<String, String> {
    // every pattern of three votes, one example per pattern
    let raw: Vec<Vec<bool>> = (0..3).map(|m| (0..8).map(|p| (p >> m) & 1 == 1).collect()).collect();
    let out = majority_vote(&sets(&raw), TiePolicy::RequireOdd).map_err(|e| e.to_string())?;
    for i in 0..8 {
        check(out.labels[i] == counting_oracle(&raw, i, TiePolicy::RequireOdd), || {
            format!("pattern {i}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let raw = random_members(&mut rng, &[1, 3, 5]);
        let out = majority_vote(&sets(&raw), TiePolicy::RequireOdd).map_err(|e| e.to_string())?;
        mismatches += (0..raw[0].len())
            .filter(|&i| out.labels[i] != counting_oracle(&raw, i, TiePolicy::RequireOdd))
            .count();
    }
    check(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok("8 exhaustive patterns + 10000 random instances, 0 mismatches".into())
}

// 4 ---------------------------------------------------------------------------

const POLICIES: [TiePolicy; 3] = [TiePolicy::RequireOdd, TiePolicy::TieToZero, TiePolicy::TieToOne];

fn random_valid(rng: &mut ChaCha8Rng) -> (Vec<Vec<bool>>, TiePolicy) {
    loop {
        let raw = random_members(rng, &[1, 2, 3, 4, 5]);
        let policy = POLICIES[rng.gen_range(0..3)];
        if policy != TiePolicy::RequireOdd || raw.len() % 2 == 1 {
            return (raw, policy);
        }
    }
}

fn vote(raw: &[Vec<bool>], policy: TiePolicy) -> Vec<Label> {
    majority_vote(&sets(raw), policy).unwrap().labels
}

fn ensemble_properties() -> Result<String, String> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let (raw, policy) = random_valid(&mut rng);
        let unanimous = vec![raw[0].clone(); raw.len()];
        let expect: Vec<Label> = raw[0].iter().map(|&v| Label::from(v)).collect();
        check(vote(&unanimous, policy) == expect, || format!("unanimity case {case}"))?;
    }
    for case in 0..1000 {
        let (raw, policy) = random_valid(&mut rng);
        let mut shuffled = raw.clone();
        shuffled.shuffle(&mut rng);
        check(vote(&raw, policy) == vote(&shuffled, policy), || {
            format!("permutation case {case}")
        })?;
    }
    for case in 0..1000 {
        let (raw, _) = random_valid(&mut rng);
        let copies = [1, 3, 5, 7][rng.gen_range(0..4)];
        let same = vec![raw[0].clone(); copies];
        let expect: Vec<Label> = raw[0].iter().map(|&v| Label::from(v)).collect();
        check(vote(&same, TiePolicy::RequireOdd) == expect, || {
            format!("idempotence case {case}")
        })?;
    }
    let mut flips = 0;
    while flips < 1000 {
        let (raw, policy) = random_valid(&mut rng);
        if raw[0].is_empty() {
            continue;
        }
        let (m, i) = (rng.gen_range(0..raw.len()), rng.gen_range(0..raw[0].len()));
        let mut low = raw.clone();
        low[m][i] = false;
        let mut high = raw;
        high[m][i] = true;
        let (before, after) = (vote(&low, policy)[i], vote(&high, policy)[i]);
        check(!(before == Label::Positive && after == Label::Negative), || {
            format!("monotonicity case {flips}")
        })?;
        flips += 1;
    }
    Ok("unanimity, permutation, idempotence, monotonicity: 1000 cases each".into())
}

// 5 ---------------------------------------------------------------------------

fn selection_logic() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let registry = Registry::open(dir.path()).map_err(|e| e.to_string())?;
    let trainer = Trainer::new(&registry);
    let (positives, negatives) = (8usize, 8usize);
    let gold = LabeledDataset::new(
        SplitName::Validation,
        (0..positives + negatives)
            .map(|i| Example::new(format!("g{i:02}"), "t", Some(Label::from(i < positives))))
            .collect(),
    )
    .unwrap();
    let train = LabeledDataset::new(SplitName::Train, vec![Example::new("t0", "t", Some(Label::Positive))]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        // few distinct counts so equal-F1 epochs are common
        let counts: Vec<(usize, usize)> = (0..10)
            .map(|_| (rng.gen_range(0..=positives) / 2 * 2, rng.gen_range(0..=2)))
            .collect();
        let oracle_f1: Vec<f64> = counts
            .iter()
            .map(|&(tp, fp)| {
                let fn_ = positives - tp;
                let denom = 2 * tp + fp + fn_;
                if denom == 0 {
                    0.0
                } else {
                    2.0 * tp as f64 / denom as f64
                }
            })
            .collect();
        let mut expected = 0;
        for (k, &f) in oracle_f1.iter().enumerate() {
            if f > oracle_f1[expected] {
                expected = k;
            }
        }
        let mut script = Script::default();
        let epochs = counts
            .iter()
            .map(|&(tp, fp)| EpochScript::from_counts(&gold, tp, fp).unwrap())
            .collect();
        script.runs.insert(1, epochs);
        let mut config = RunConfig::new(
            BackboneId::new("stub", "scripted"),
            Hyperparameters::new(1e-5, 0.0, 8),
            1,
        );
        config.regime.epochs_per_iteration = 10;
        config.hyperparameters.weight_decay = case as f64;
        let run = trainer
            .run_iteration(&config, &train, &gold, &mut ScriptedAdapter::new(script))
            .map_err(|e| e.to_string())?;
        check(run.best_epoch == expected + 1, || {
            format!(
                "case {case}: best epoch {} but argmax is {} ({oracle_f1:?})",
                run.best_epoch,
                expected + 1
            )
        })?;
    }
    Ok("200 random 10-epoch scripts, earliest argmax every time".into())
}

// 6 ---------------------------------------------------------------------------

fn tree_files(root: &Path, name_filter: &dyn Fn(&Path) -> bool) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if name_filter(&path) {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Result<String, String> {
    let p = common::tiny_project(
        (120, 40, 0),
        17,
        "seeds = [1, 2, 3]\n[regime]\nepochs_per_iteration = 5\n",
    );
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let reg = p.path(name);
        run_ok(&["train", "--config", s(&p.config), "--registry", s(&reg)]);
        let tracked = |f: &Path| {
            let n = f.file_name().unwrap().to_string_lossy();
            n == "epochs.jsonl" || n.ends_with(".tsv")
        };
        trees.push(tree_files(&reg.join("runs"), &tracked));
    }
    check(!trees[0].is_empty(), || "no files written".into())?;
    let epochs = trees[0].iter().filter(|(n, _)| n.ends_with("epochs.jsonl")).count();
    check(epochs == 3, || format!("{epochs} epochs.jsonl files"))?;
    for ((na, a), (nb, b)) in trees[0].iter().zip(&trees[1]) {
        check(na == nb && a == b, || format!("{na} differs"))?;
    }
    check(trees[0].len() == trees[1].len(), || "different file sets".into())?;
    Ok(format!("{} files byte-identical across two executions", trees[0].len()))
}

// 7 ---------------------------------------------------------------------------

fn desk_scale_campaign() -> Result<String, String> {
    let p = common::tiny_project((200, 50, 50), 5, "");
    let cfg = s(&p.config);
    let train = run_ok(&["train", "--config", cfg]);
    let runs = run_ids(&train);
    check(runs.len() == 3, || format!("{} runs", runs.len()))?;
    let ens = ensemble_id(&run_ok(&[
        "ensemble",
        "--config",
        cfg,
        "--campaign",
        &campaign_id(&train),
    ]));

    let mut args = vec!["evaluate", "--config", cfg, "--format", "json"];
    args.extend(runs.iter().map(String::as_str));
    args.push(&ens);
    let report: serde_json::Value = serde_json::from_str(&run_ok(&args)).map_err(|e| e.to_string())?;
    let rows = report["rows"].as_array().ok_or("report has no rows")?;
    let mut summary = Vec::new();
    for row in rows {
        let name = row["name"].as_str().unwrap_or_default();
        let f1 = row["f1"].as_f64().ok_or("row without f1")?;
        check(f1 >= 0.95, || format!("{name} validation F1 {f1:.4} < 0.95"))?;
        summary.push(format!("{f1:.3}"));
    }
    check(rows.len() == 4, || format!("{} report rows", rows.len()))?;
    Ok(format!("runs + ensemble validation F1 [{}]", summary.join(", ")))
}

// 8 ---------------------------------------------------------------------------

fn hpo_sanity() -> Result<String, String> {
    const TARGET: f64 = 7.21422e-06;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let objective = |h: &Hyperparameters| -> Result<f64, String> {
        let d = h.learning_rate.ln() - TARGET.ln();
        Ok(-d * d)
    };
    let result = execute_search(
        &SearchSpace::default(),
        200,
        2024,
        4,
        objective,
        Some(SearchOutput { dir: dir.path() }),
    )
    .map_err(|e| e.to_string())?;
    let ratio = result.best.learning_rate / TARGET;
    check((1.0 / 1.5..=1.5).contains(&ratio), || {
        format!("best lr {:e}", result.best.learning_rate)
    })?;

    let log: Vec<Trial> = read_jsonl(&dir.path().join("search.jsonl")).map_err(|e| e.to_string())?;
    check(log.len() == 200, || format!("{} logged trials", log.len()))?;
    let mut brute = 0;
    for (i, t) in log.iter().enumerate() {
        if objective(&t.hyperparameters)? > objective(&log[brute].hyperparameters)? {
            brute = i;
        }
    }
    check(
        log[brute].hyperparameters == result.best && log[brute].index == result.best_index,
        || format!("brute-force best is trial {brute}, search chose {}", result.best_index),
    )?;
    let mut by_start: Vec<&Trial> = log.iter().collect();
    by_start.sort_by_key(|t| t.start_order);
    check(
        by_start
            .iter()
            .enumerate()
            .all(|(k, t)| t.start_order == Some(k) && t.index == k),
        || "start order is not generation order".into(),
    )?;
    check(log.iter().all(|t| t.status == TrialStatus::Done), || {
        "failed trials".into()
    })?;
    Ok(format!(
        "best lr {:.4e} (x{ratio:.3} of target), FIFO start order",
        result.best.learning_rate
    ))
}

// 9 ---------------------------------------------------------------------------

const ALPHABET: &[char] = &['a', 'Z', '0', ' ', ',', '"', '\'', '#', '@', 'é', 'ü', '😀', ';', '.'];

fn random_text(rng: &mut ChaCha8Rng, control: bool) -> String {
    let len = rng.gen_range(0..40);
    let mut t = String::from("x");
    for _ in 0..len {
        let c = if control && rng.gen_bool(0.1) {
            ['\t', '\n'][rng.gen_range(0..2)]
        } else {
            ALPHABET[rng.gen_range(0..ALPHABET.len())]
        };
        t.push(c);
    }
    t
}

fn random_dataset(rng: &mut ChaCha8Rng, control: bool) -> LabeledDataset {
    let labeled = rng.gen_bool(0.8);
    let n = rng.gen_range(1..30);
    let examples = (0..n)
        .map(|i| {
            let label = labeled.then(|| Label::from(rng.gen_bool(0.5)));
            Example::new(format!("id{i}"), random_text(rng, control), label)
        })
        .collect();
    let split = [SplitName::Train, SplitName::Validation, SplitName::Test][rng.gen_range(0..3)];
    LabeledDataset::new(split, examples).unwrap()
}

fn round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        for (format, control) in [(DatasetFormat::Tsv, false), (DatasetFormat::Jsonl, true)] {
            let ds = random_dataset(&mut rng, control);
            let path = dir.path().join(format!("{case}.{format}"));
            write_dataset(&ds, &path, format).map_err(|e| e.to_string())?;
            let back = load_dataset(&path, format, ds.split_name()).map_err(|e| e.to_string())?;
            check(back == ds, || format!("{format} case {case} differs"))?;
        }
        let config = RunConfig {
            backbone: BackboneId::new(
                ["roberta-large", "vinai/bertweet-large", "tiny-bow"][rng.gen_range(0..3)],
                "f",
            ),
            hyperparameters: Hyperparameters::new(
                10f64.powf(rng.gen_range(-7.0..-1.0)),
                rng.gen_range(0.0..0.5),
                rng.gen_range(1..64),
            ),
            regime: RegimeSettings {
                epochs_per_iteration: rng.gen_range(1..20),
                max_sequence_length: rng.gen_range(1..1024),
                mixed_precision: rng.gen(),
                ..RegimeSettings::default()
            },
            seed: rng.gen(),
        };
        let json = serde_json::to_string(&config).map_err(|e| e.to_string())?;
        let back: RunConfig = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        check(back == config, || format!("RunConfig case {case} differs"))?;
    }
    Ok("100 TSV + 100 JSONL datasets, 100 RunConfigs".into())
}

// -----------------------------------------------------------------------------

type Criterion = (&'static str, Duration, fn() -> Result<String, String>);

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "metrics oracle vs published table",
            Duration::from_secs(1),
            metrics_vs_published,
        ),
        (
            "run statistics vs published table",
            Duration::from_secs(1),
            statistics_vs_published,
        ),
        ("voting oracle", Duration::from_secs(10), voting_oracle),
        ("ensemble properties", Duration::from_secs(10), ensemble_properties),
        ("trainer best-epoch selection", Duration::from_secs(5), selection_logic),
        ("training determinism", Duration::from_secs(120), determinism),
        ("desk-scale campaign", Duration::from_secs(300), desk_scale_campaign),
        ("search sanity", Duration::from_secs(30), hpo_sanity),
        ("format round-trips", Duration::from_secs(5), round_trips),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("took {elapsed:.2?}, budget {budget:?} ({detail})")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS [{elapsed:.2?}] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL [{elapsed:.2?}] {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
