#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seedvote::corpus::write_dataset;
use seedvote::synthetic::separable_splits;
use seedvote::{DatasetFormat, LabeledDataset};
use tempfile::TempDir;

/// A temp directory with synthetic splits, a config file and a registry path.
pub struct Project {
    pub dir: TempDir,
    pub config: PathBuf,
    pub registry: PathBuf,
}

impl Project {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn write_split(dir: &Path, name: &str, ds: &LabeledDataset) {
    write_dataset(ds, &dir.join(name), DatasetFormat::Tsv).unwrap();
}

/// Tiny-adapter project over a separable corpus. `extra` is appended to the
/// TOML config.
pub fn tiny_project(sizes: (usize, usize, usize), seed: u64, extra: &str) -> Project {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, test) = separable_splits(sizes.0, sizes.1, sizes.2, seed, true);
    write_split(dir.path(), "train.tsv", &train);
    write_split(dir.path(), "validation.tsv", &val);
    if !test.is_empty() {
        write_split(dir.path(), "test.tsv", &test);
    }
    let test_line = if test.is_empty() { "" } else { "test = \"test.tsv\"\n" };
    let config = dir.path().join("project.toml");
    let text = format!(
        "output_dir = \"registry\"\n\
         {extra}\n\
         [data]\ntrain = \"train.tsv\"\nvalidation = \"validation.tsv\"\n{test_line}\n\
         [backbone]\nname = \"tiny-bow\"\nfamily = \"hashed-logistic\"\n"
    );
    fs::write(&config, text).unwrap();
    let registry = dir.path().join("registry");
    Project { dir, config, registry }
}

pub fn seedvote() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_seedvote"));
    cmd.env_remove("SEEDVOTE_REGISTRY");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    seedvote().args(args).output().unwrap()
}

/// Run and require exit status 0; returns stdout.
pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "seedvote {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Run and require a nonzero exit; returns stderr.
pub fn run_err(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "seedvote {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// The `campaign <id>` line of `train` output.
pub fn campaign_id(train_stdout: &str) -> String {
    train_stdout
        .lines()
        .find_map(|l| l.strip_prefix("campaign "))
        .expect("train prints the campaign id")
        .trim()
        .to_string()
}

/// The `ensemble <id>` line of `ensemble` output.
pub fn ensemble_id(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("ensemble "))
        .expect("ensemble prints its id")
        .trim()
        .to_string()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Run ids from the per-seed lines of `train` output.
pub fn run_ids(train_stdout: &str) -> Vec<String> {
    train_stdout
        .lines()
        .filter(|l| l.trim_start().starts_with("seed "))
        .map(|l| l.split_whitespace().last().unwrap().to_string())
        .collect()
}
