//! Synthetic, linearly separable tweet-like corpora for desk-scale runs.
//!
//! Positive examples draw cue words only from [`POSITIVE_CUES`], negatives
//! only from [`NEGATIVE_CUES`]; both share the [`FILLER`] vocabulary. A
//! keyword count therefore separates the classes perfectly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Example, Label, LabeledDataset, SplitName};

pub const POSITIVE_CUES: &[&str] = &[
    "son",
    "daughter",
    "toddler",
    "diagnosed",
    "pediatrician",
    "therapist",
    "iep",
    "preschooler",
    "kiddo",
    "firstborn",
];

pub const NEGATIVE_CUES: &[&str] = &[
    "awareness",
    "article",
    "study",
    "celebrity",
    "research",
    "podcast",
    "headline",
    "campaign",
    "statistics",
    "documentary",
];

pub const FILLER: &[&str] = &[
    "today", "really", "just", "about", "adhd", "autism", "asthma", "speech", "delay", "the", "and", "with", "so",
    "this", "week", "again", "honestly", "tired",
];

/// `n` examples with ids `<prefix><i>`, roughly balanced classes.
pub fn separable_examples(prefix: &str, n: usize, seed: u64, labeled: bool) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = rng.gen_bool(0.5);
            let cues = if positive { POSITIVE_CUES } else { NEGATIVE_CUES };
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..rng.gen_range(2..=4) {
                words.push(cues.choose(&mut rng).expect("non-empty vocabulary"));
            }
            for _ in 0..rng.gen_range(3..=8) {
                words.push(FILLER.choose(&mut rng).expect("non-empty vocabulary"));
            }
            words.shuffle(&mut rng);
            Example::new(
                format!("{prefix}{i}"),
                words.join(" "),
                labeled.then_some(Label::from(positive)),
            )
        })
        .collect()
}

pub fn separable_split(split: SplitName, n: usize, seed: u64, labeled: bool) -> LabeledDataset {
    let prefix = format!("{}-", split.as_str());
    LabeledDataset::new(split, separable_examples(&prefix, n, seed, labeled)).expect("generated ids are unique")
}

/// Train / validation / test splits with distinct seeds and ids.
pub fn separable_splits(
    n_train: usize,
    n_validation: usize,
    n_test: usize,
    seed: u64,
    labeled_test: bool,
) -> (LabeledDataset, LabeledDataset, LabeledDataset) {
    (
        separable_split(SplitName::Train, n_train, seed, true),
        separable_split(SplitName::Validation, n_validation, seed.wrapping_add(1), true),
        separable_split(SplitName::Test, n_test, seed.wrapping_add(2), labeled_test),
    )
}
