//! Hard majority voting over the label predictions of several runs.
//!
//! For binary labels the per-example argmax over vote counts reduces to a
//! threshold: label 1 wins when more than half of the members vote 1, label 0
//! when fewer than half do, and an exact half (even membership only) is settled
//! by the [`TiePolicy`].

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Label, LabeledDataset, SplitName};
use crate::registry::{Registry, RegistryError};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member `{member}` is misaligned with `{reference}`: {reason}")]
    MisalignedMembers {
        member: String,
        reference: String,
        reason: String,
    },
    #[error("{0} members with tie policy require-odd; use an odd count or an explicit tie policy")]
    EvenMembershipWithRequireOdd(usize),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{run}` has no {split} predictions")]
    MissingPredictions { run: String, split: SplitName },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Reject even membership outright.
    #[default]
    RequireOdd,
    TieToZero,
    TieToOne,
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::RequireOdd => "require-odd",
            TiePolicy::TieToZero => "tie-to-zero",
            TiePolicy::TieToOne => "tie-to-one",
        })
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "require-odd" => Ok(TiePolicy::RequireOdd),
            "tie-to-zero" => Ok(TiePolicy::TieToZero),
            "tie-to-one" => Ok(TiePolicy::TieToOne),
            other => Err(format!(
                "unknown tie policy `{other}` (expected require-odd, tie-to-zero or tie-to-one)"
            )),
        }
    }
}

impl TiePolicy {
    pub fn check_membership(self, n: usize) -> Result<(), EnsembleError> {
        if n == 0 {
            return Err(EnsembleError::NoMembers);
        }
        if self == TiePolicy::RequireOdd && n.is_multiple_of(2) {
            return Err(EnsembleError::EvenMembershipWithRequireOdd(n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Run,
    Ensemble,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: SourceKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_policy: Option<TiePolicy>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Provenance {
    pub fn now(kind: SourceKind) -> Self {
        Provenance {
            kind,
            members: Vec::new(),
            tie_policy: None,
            created_at: unix_now(),
        }
    }
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Ordered hard labels for one split, aligned with the split's example ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub source_id: String,
    pub split_name: SplitName,
    pub example_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub provenance: Provenance,
}

impl PredictionSet {
    pub fn new(
        source_id: impl Into<String>,
        split_name: SplitName,
        example_ids: Vec<String>,
        labels: Vec<Label>,
        provenance: Provenance,
    ) -> Self {
        assert_eq!(example_ids.len(), labels.len(), "one label per example id");
        PredictionSet {
            source_id: source_id.into(),
            split_name,
            example_ids,
            labels,
            provenance,
        }
    }

    /// Labels for `ds`, ids taken from the dataset in order.
    pub fn for_dataset(source_id: impl Into<String>, ds: &LabeledDataset, labels: Vec<Label>) -> Self {
        let ids = ds.ids().map(str::to_string).collect();
        PredictionSet::new(
            source_id,
            ds.split_name(),
            ids,
            labels,
            Provenance::now(SourceKind::External),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Write `id<TAB>label` rows under an `id<TAB>label` header.
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "id\tlabel")?;
        for (id, label) in self.example_ids.iter().zip(&self.labels) {
            writeln!(w, "{id}\t{label}")?;
        }
        w.flush()
    }

    pub fn read_tsv(
        path: &Path,
        source_id: impl Into<String>,
        split_name: SplitName,
        provenance: Provenance,
    ) -> Result<PredictionSet, PredictionFileError> {
        let bad = |line: usize, reason: String| PredictionFileError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let file = fs::File::open(path).map_err(|source| PredictionFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| PredictionFileError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if i == 0 {
                if line != "id\tlabel" {
                    return Err(bad(1, "expected header `id<TAB>label`".into()));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (id, label) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected two tab-separated fields".into()))?;
            ids.push(id.to_string());
            labels.push(label.parse().map_err(|e| bad(i + 1, e))?);
        }
        Ok(PredictionSet::new(source_id, split_name, ids, labels, provenance))
    }
}

#[derive(Debug, Error)]
pub enum PredictionFileError {
    #[error("{path}: line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Deterministic id for a member list and tie policy.
pub fn ensemble_id(member_ids: &[String], tie_policy: TiePolicy) -> String {
    let mut h = Sha256::new();
    for m in member_ids {
        h.update(m.as_bytes());
        h.update([0u8]);
    }
    h.update(tie_policy.to_string().as_bytes());
    format!("ens-{}", &hex::encode(h.finalize())[..12])
}

fn check_aligned(members: &[PredictionSet]) -> Result<(), EnsembleError> {
    let first = &members[0];
    for m in &members[1..] {
        let misaligned = |reason: String| EnsembleError::MisalignedMembers {
            member: m.source_id.clone(),
            reference: first.source_id.clone(),
            reason,
        };
        if m.split_name != first.split_name {
            return Err(misaligned(format!("split {} vs {}", m.split_name, first.split_name)));
        }
        if m.example_ids.len() != first.example_ids.len() {
            return Err(misaligned(format!(
                "{} examples vs {}",
                m.example_ids.len(),
                first.example_ids.len()
            )));
        }
        if let Some(pos) = m.example_ids.iter().zip(&first.example_ids).position(|(a, b)| a != b) {
            return Err(misaligned(format!(
                "id `{}` vs `{}` at position {pos}",
                m.example_ids[pos], first.example_ids[pos]
            )));
        }
    }
    Ok(())
}

/// Combine member predictions by per-example vote count.
pub fn majority_vote(members: &[PredictionSet], tie_policy: TiePolicy) -> Result<PredictionSet, EnsembleError> {
    tie_policy.check_membership(members.len())?;
    check_aligned(members)?;

    let n = members.len();
    let labels = (0..members[0].len())
        .map(|i| {
            let ones = members.iter().filter(|m| m.labels[i].is_positive()).count();
            match (2 * ones).cmp(&n) {
                std::cmp::Ordering::Greater => Label::Positive,
                std::cmp::Ordering::Less => Label::Negative,
                std::cmp::Ordering::Equal => match tie_policy {
                    TiePolicy::TieToOne => Label::Positive,
                    TiePolicy::TieToZero => Label::Negative,
                    TiePolicy::RequireOdd => unreachable!("odd membership checked above"),
                },
            }
        })
        .collect();

    let member_ids: Vec<String> = members.iter().map(|m| m.source_id.clone()).collect();
    Ok(PredictionSet {
        source_id: ensemble_id(&member_ids, tie_policy),
        split_name: members[0].split_name,
        example_ids: members[0].example_ids.clone(),
        labels,
        provenance: Provenance {
            kind: SourceKind::Ensemble,
            members: member_ids,
            tie_policy: Some(tie_policy),
            created_at: unix_now(),
        },
    })
}

/// Persisted ensemble manifest (`ensemble.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub id: String,
    pub member_run_ids: Vec<String>,
    pub tie_policy: TiePolicy,
}

/// Vote over the stored validation predictions of `run_ids` and persist the
/// manifest together with the combined predictions.
pub fn build_ensemble(
    registry: &Registry,
    run_ids: &[String],
    tie_policy: TiePolicy,
) -> Result<EnsembleModel, EnsembleError> {
    tie_policy.check_membership(run_ids.len())?;
    let mut members = Vec::with_capacity(run_ids.len());
    for id in run_ids {
        if !registry.has_run(id) {
            return Err(EnsembleError::UnknownRun(id.clone()));
        }
        let preds = registry
            .read_run_predictions(id, SplitName::Validation)
            .map_err(|e| match e {
                RegistryError::MissingPredictions { .. } => EnsembleError::MissingPredictions {
                    run: id.clone(),
                    split: SplitName::Validation,
                },
                other => other.into(),
            })?;
        members.push(preds);
    }
    let combined = majority_vote(&members, tie_policy)?;
    let model = EnsembleModel {
        id: combined.source_id.clone(),
        member_run_ids: run_ids.to_vec(),
        tie_policy,
    };
    registry.save_ensemble(&model, &combined)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, labels: &[u8]) -> PredictionSet {
        PredictionSet::new(
            id,
            SplitName::Validation,
            (0..labels.len()).map(|i| format!("x{i}")).collect(),
            labels.iter().map(|&l| Label::try_from(l).unwrap()).collect(),
            Provenance::now(SourceKind::Run),
        )
    }

    fn as_u8(p: &PredictionSet) -> Vec<u8> {
        p.labels.iter().map(|l| l.as_u8()).collect()
    }

    #[test]
    fn strict_majority() {
        let out = majority_vote(
            &[set("a", &[1, 0]), set("b", &[1, 0]), set("c", &[0, 1])],
            TiePolicy::RequireOdd,
        )
        .unwrap();
        assert_eq!(as_u8(&out), [1, 0]);
        assert_eq!(out.provenance.members, ["a", "b", "c"]);
        assert_eq!(out.provenance.tie_policy, Some(TiePolicy::RequireOdd));
        assert!(out.source_id.starts_with("ens-"));
    }

    #[test]
    fn single_member_identity() {
        let m = set("solo", &[1, 0, 0, 1]);
        let out = majority_vote(std::slice::from_ref(&m), TiePolicy::RequireOdd).unwrap();
        assert_eq!(out.labels, m.labels);
        assert_eq!(out.example_ids, m.example_ids);
    }

    #[test]
    fn exhaustive_three_member_patterns() {
        for pattern in 0u8..8 {
            let votes = [pattern & 1, (pattern >> 1) & 1, (pattern >> 2) & 1];
            let members: Vec<_> = votes
                .iter()
                .enumerate()
                .map(|(i, &v)| set(&format!("m{i}"), &[v]))
                .collect();
            let expected = u8::from(votes.iter().map(|&v| v as usize).sum::<usize>() >= 2);
            let out = majority_vote(&members, TiePolicy::RequireOdd).unwrap();
            assert_eq!(as_u8(&out), [expected], "pattern {votes:?}");
        }
    }

    #[test]
    fn tie_policies() {
        let m = [set("a", &[1, 1]), set("b", &[0, 1])];
        assert!(matches!(
            majority_vote(&m, TiePolicy::RequireOdd),
            Err(EnsembleError::EvenMembershipWithRequireOdd(2))
        ));
        assert_eq!(as_u8(&majority_vote(&m, TiePolicy::TieToZero).unwrap()), [0, 1]);
        assert_eq!(as_u8(&majority_vote(&m, TiePolicy::TieToOne).unwrap()), [1, 1]);
        assert!(matches!(
            majority_vote(&[], TiePolicy::TieToOne),
            Err(EnsembleError::NoMembers)
        ));
    }

    #[test]
    fn misaligned_members_rejected() {
        let a = set("a", &[1, 0, 1]);
        let mut b = set("b", &[1, 0, 1]);
        b.example_ids.swap(0, 1);
        let c = set("c", &[1, 0, 1]);
        assert!(matches!(
            majority_vote(&[a.clone(), b, c.clone()], TiePolicy::RequireOdd),
            Err(EnsembleError::MisalignedMembers { .. })
        ));
        let short = set("s", &[1, 0]);
        assert!(matches!(
            majority_vote(&[a.clone(), short, c.clone()], TiePolicy::RequireOdd),
            Err(EnsembleError::MisalignedMembers { .. })
        ));
        let mut other_split = set("t", &[1, 0, 1]);
        other_split.split_name = SplitName::Test;
        assert!(matches!(
            majority_vote(&[a, other_split, c], TiePolicy::RequireOdd),
            Err(EnsembleError::MisalignedMembers { .. })
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = set("a", &[1, 0, 1]);
        let path = dir.path().join("validation.tsv");
        p.write_tsv(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "id\tlabel\nx0\t1\nx1\t0\nx2\t1\n");
        let back = PredictionSet::read_tsv(&path, "a", SplitName::Validation, p.provenance.clone()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn ensemble_id_depends_on_order_and_policy() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let a = ensemble_id(&ids(&["r1", "r2", "r3"]), TiePolicy::RequireOdd);
        assert_eq!(a, ensemble_id(&ids(&["r1", "r2", "r3"]), TiePolicy::RequireOdd));
        assert_ne!(a, ensemble_id(&ids(&["r2", "r1", "r3"]), TiePolicy::RequireOdd));
        assert_ne!(a, ensemble_id(&ids(&["r1", "r2", "r3"]), TiePolicy::TieToOne));
    }
}
