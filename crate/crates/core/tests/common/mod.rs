#![allow(dead_code)]

use seedvote::adapter::{EpochScript, Script};
use seedvote::{Example, Label, LabeledDataset, SplitName};

/// Validation split with `positives` gold-1 examples followed by `negatives`
/// gold-0 examples.
pub fn gold_split(positives: usize, negatives: usize) -> LabeledDataset {
    let ex = (0..positives + negatives)
        .map(|i| {
            Example::new(
                format!("v{i:05}"),
                format!("tweet {i}"),
                Some(Label::from(i < positives)),
            )
        })
        .collect();
    LabeledDataset::new(SplitName::Validation, ex).unwrap()
}

pub fn train_split(n: usize) -> LabeledDataset {
    let ex = (0..n)
        .map(|i| {
            Example::new(
                format!("t{i}"),
                format!("train tweet {i}"),
                Some(Label::from(i % 2 == 0)),
            )
        })
        .collect();
    LabeledDataset::new(SplitName::Train, ex).unwrap()
}

/// Script where run `seed` reaches the given (tp, fp) counts epoch by epoch.
pub fn script_from_counts(gold: &LabeledDataset, runs: &[(i64, Vec<(usize, usize)>)]) -> Script {
    let mut script = Script::default();
    for (seed, epochs) in runs {
        let scripted = epochs
            .iter()
            .map(|&(tp, fp)| EpochScript::from_counts(gold, tp, fp).unwrap())
            .collect();
        script.runs.insert(*seed, scripted);
    }
    script
}

/// Naive per-example F1 of the positive class (no confusion matrix).
pub fn naive_f1(pred: &[Label], gold: &[Label]) -> f64 {
    let mut hits = 0.0;
    let mut predicted = 0.0;
    let mut actual = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        if *p == Label::Positive {
            predicted += 1.0;
        }
        if *g == Label::Positive {
            actual += 1.0;
        }
        if *p == Label::Positive && *g == Label::Positive {
            hits += 1.0;
        }
    }
    if predicted + actual == 0.0 {
        0.0
    } else {
        2.0 * hits / (predicted + actual)
    }
}
