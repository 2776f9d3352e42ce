use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use seedvote::adapter::{AdapterError, BackboneAdapter};
use seedvote::hpo::{
    execute_search, generate_trials, iteration_objective, LogUniform, SearchOutput, SearchSpace, Trial, TrialStatus,
    SEARCH_RUN_SEED,
};
use seedvote::registry::read_jsonl;
use seedvote::synthetic::separable_splits;
use seedvote::{BackboneId, Hyperparameters, Registry, RunConfig, TinyAdapter, Trainer};

const TARGET_LR: f64 = 7.21422e-06;

fn log_distance(h: &Hyperparameters) -> Result<f64, String> {
    let d = h.learning_rate.ln() - TARGET_LR.ln();
    Ok(-d * d)
}

/// Kolmogorov-Smirnov statistic of `xs` against U(0, 1).
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[test]
fn log_learning_rate_is_uniform() {
    let space = SearchSpace {
        learning_rate: LogUniform::new(1e-6, 1e-4),
        ..SearchSpace::default()
    };
    let trials = generate_trials(&space, 1000, 42).unwrap();
    assert!(trials.iter().all(|t| (1e-6..=1e-4).contains(&t.learning_rate)));
    let (a, b) = (1e-6f64.ln(), 1e-4f64.ln());
    let d = ks_uniform(trials.iter().map(|t| (t.learning_rate.ln() - a) / (b - a)).collect());
    // asymptotic critical value at alpha = 0.01
    let critical = 1.6276 / (1000f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");

    let sizes = [8, 16, 32].map(|b| trials.iter().filter(|t| t.batch_size == b).count());
    assert!(sizes.iter().all(|&c| c > 250), "{sizes:?}");
}

#[test]
fn log_distance_search_finds_target() {
    let space = SearchSpace::default();
    let result = execute_search(&space, 200, 7, 4, log_distance, None).unwrap();
    let ratio = result.best.learning_rate / TARGET_LR;
    assert!(
        (1.0 / 1.5..=1.5).contains(&ratio),
        "best lr {}",
        result.best.learning_rate
    );

    // brute force over the same sampled points
    let sampled = generate_trials(&space, 200, 7).unwrap();
    let mut oracle = 0;
    for (i, h) in sampled.iter().enumerate() {
        if log_distance(h).unwrap() > log_distance(&sampled[oracle]).unwrap() {
            oracle = i;
        }
    }
    assert_eq!(result.best_index, oracle);
    assert_eq!(result.best, sampled[oracle]);
}

#[test]
fn fifo_start_order_for_any_parallelism() {
    let space = SearchSpace::default();
    let reference = generate_trials(&space, 24, 3).unwrap();
    for workers in [1, 2, 3, 8, 64] {
        let starts = Mutex::new(Vec::new());
        let result = execute_search(
            &space,
            24,
            3,
            workers,
            |h| {
                let idx = reference.iter().position(|r| r == h).unwrap();
                starts.lock().unwrap().push(idx);
                // uneven durations so completion order differs from start order
                std::thread::sleep(std::time::Duration::from_millis(((idx * 7) % 5) as u64));
                Ok(h.weight_decay)
            },
            None,
        )
        .unwrap();
        let hp: Vec<Hyperparameters> = result.trials.iter().map(|t| t.hyperparameters).collect();
        assert_eq!(hp, reference, "sampling independent of parallelism");
        for t in &result.trials {
            assert_eq!(t.start_order, Some(t.index));
            assert_eq!(t.status, TrialStatus::Done);
        }
        // with one worker the objective calls themselves are in order
        if workers == 1 {
            assert_eq!(*starts.lock().unwrap(), (0..24).collect::<Vec<_>>());
        }
    }
}

#[test]
fn at_most_parallelism_trials_run_at_once() {
    let running = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    execute_search(
        &SearchSpace::default(),
        16,
        1,
        3,
        |_| {
            let now = running.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            running.fetch_sub(1, Ordering::SeqCst);
            Ok(0.1)
        },
        None,
    )
    .unwrap();
    assert!(peak.load(Ordering::SeqCst) <= 3);
}

#[test]
fn persisted_log_agrees_with_result() {
    let dir = tempfile::tempdir().unwrap();
    let result = execute_search(
        &SearchSpace::default(),
        30,
        11,
        4,
        |h| {
            if h.batch_size == 32 {
                Err("oom".into())
            } else {
                log_distance(h)
            }
        },
        Some(SearchOutput { dir: dir.path() }),
    )
    .unwrap();
    let log: Vec<Trial> = read_jsonl(&dir.path().join("search.jsonl")).unwrap();
    assert_eq!(log.len(), 30);
    let independent_max = log
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .map(|t| t.objective.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_objective, independent_max);
    assert!(log
        .iter()
        .filter(|t| t.status == TrialStatus::Failed)
        .all(|t| t.error.as_deref() == Some("oom")));
}

#[test]
fn production_objective_trains_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::open(dir.path()).unwrap();
    let trainer = Trainer::new(&reg);
    let (train, val, _) = separable_splits(80, 30, 0, 4, true);
    let mut base = RunConfig::new(
        BackboneId::new("tiny-bow", "hashed-logistic"),
        Hyperparameters::new(0.05, 0.01, 16),
        99,
    );
    base.regime.epochs_per_iteration = 3;
    let space = SearchSpace {
        learning_rate: LogUniform::new(0.01, 0.2),
        weight_decay: LogUniform::new(1e-3, 0.1),
        batch_size: vec![8, 16],
    };
    let make = |_: &RunConfig| -> Result<Box<dyn BackboneAdapter>, AdapterError> { Ok(Box::new(TinyAdapter::new())) };
    let objective = iteration_objective(&trainer, &base, &train, &val, make);
    let result = execute_search(&space, 4, 2, 2, objective, None).unwrap();
    assert!((0.0..=1.0).contains(&result.best_objective));
    let runs = reg.run_ids().unwrap();
    assert_eq!(runs.len(), 4);
    assert!(runs.iter().all(|r| r.ends_with(&format!("-seed{SEARCH_RUN_SEED}"))));
}
