//! Labeled text datasets: the example type, split bookkeeping and the
//! TSV / CSV / JSONL readers and writers.
//!
//! The canonical interchange format is UTF-8 TSV with the header
//! `id<TAB>text<TAB>label`. The label column may be absent or left empty for
//! unlabeled splits. Text containing tabs or line breaks can only be stored in
//! JSONL.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}: duplicate id `{id}` at line {line}")]
    DuplicateId { path: PathBuf, id: String, line: usize },
    #[error("{0}: dataset contains no examples")]
    EmptyDataset(PathBuf),
    #[error("{path}: {labeled} labeled and {unlabeled} unlabeled examples; mixed labeling is not allowed")]
    MixedLabeling {
        path: PathBuf,
        labeled: usize,
        unlabeled: usize,
    },
    #[error("example `{id}` cannot be written as {format}: {reason}")]
    Unwritable {
        id: String,
        format: DatasetFormat,
        reason: String,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Binary class label. `Positive` (1) is the class every headline metric scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Label {
        if b {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl FromStr for Label {
    type Err = String;

    /// Strict: only the literal strings `0` and `1` are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "0" => Ok(Label::Negative),
            "1" => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got `{other}`")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "dev" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(CorpusError::UnknownName {
                kind: "split",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Tsv,
    Csv,
    Jsonl,
}

impl DatasetFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<DatasetFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "tsv" | "txt" => Some(DatasetFormat::Tsv),
            "csv" => Some(DatasetFormat::Csv),
            "jsonl" | "ndjson" => Some(DatasetFormat::Jsonl),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Tsv => "tsv",
            DatasetFormat::Csv => "csv",
            DatasetFormat::Jsonl => "jsonl",
        })
    }
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(DatasetFormat::Tsv),
            "csv" => Ok(DatasetFormat::Csv),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(CorpusError::UnknownName {
                kind: "dataset format",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<Label>) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// One split of examples in file order.
///
/// Construct through [`LabeledDataset::new`] or the loaders so that the
/// invariants (unique ids, non-blank text, all-or-nothing labels) hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    split_name: SplitName,
    examples: Vec<Example>,
    labeled: bool,
}

impl LabeledDataset {
    pub fn new(split_name: SplitName, examples: Vec<Example>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.text.trim().is_empty() {
                return Err(CorpusError::Invalid(format!("example `{}` has blank text", ex.id)));
            }
            if ex.id.is_empty() {
                return Err(CorpusError::Invalid("example with empty id".into()));
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate id `{}`", ex.id)));
            }
        }
        let n_labeled = examples.iter().filter(|e| e.label.is_some()).count();
        if n_labeled != 0 && n_labeled != examples.len() {
            return Err(CorpusError::Invalid(format!(
                "{n_labeled} of {} examples are labeled; mixed labeling is not allowed",
                examples.len()
            )));
        }
        let labeled = !examples.is_empty() && n_labeled == examples.len();
        Ok(LabeledDataset {
            split_name,
            examples,
            labeled,
        })
    }

    pub fn split_name(&self) -> SplitName {
        self.split_name
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Gold labels in order, or `None` for an unlabeled split.
    pub fn labels(&self) -> Option<Vec<Label>> {
        if !self.labeled {
            return None;
        }
        self.examples.iter().map(|e| e.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub split_name: SplitName,
    pub total_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_count: Option<usize>,
}

pub fn summarize(ds: &LabeledDataset) -> DatasetSummary {
    let (positive_count, negative_count) = match ds.labels() {
        Some(labels) => {
            let pos = labels.iter().filter(|l| l.is_positive()).count();
            (Some(pos), Some(labels.len() - pos))
        }
        None => (None, None),
    };
    DatasetSummary {
        split_name: ds.split_name,
        total_count: ds.len(),
        positive_count,
        negative_count,
    }
}

/// Load a split, rejecting files with no examples.
pub fn load_dataset(path: &Path, format: DatasetFormat, split_name: SplitName) -> Result<LabeledDataset, CorpusError> {
    let ds = load_dataset_allow_empty(path, format, split_name)?;
    if ds.is_empty() {
        return Err(CorpusError::EmptyDataset(path.to_path_buf()));
    }
    Ok(ds)
}

/// Same as [`load_dataset`] but a header-only (or empty) file yields an empty split.
pub fn load_dataset_allow_empty(
    path: &Path,
    format: DatasetFormat,
    split_name: SplitName,
) -> Result<LabeledDataset, CorpusError> {
    let records = match format {
        DatasetFormat::Tsv => read_tsv(path)?,
        DatasetFormat::Csv => read_csv(path)?,
        DatasetFormat::Jsonl => read_jsonl(path)?,
    };
    assemble(path, split_name, records)
}

struct RawRecord {
    line: usize,
    id: String,
    text: String,
    label: Option<String>,
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn assemble(path: &Path, split_name: SplitName, records: Vec<RawRecord>) -> Result<LabeledDataset, CorpusError> {
    let mut seen = HashSet::with_capacity(records.len());
    let mut examples = Vec::with_capacity(records.len());
    for rec in records {
        if rec.id.is_empty() {
            return Err(malformed(path, rec.line, "missing id"));
        }
        if rec.text.trim().is_empty() {
            return Err(malformed(path, rec.line, "missing or blank text"));
        }
        let label = match rec.label.as_deref() {
            None | Some("") => None,
            Some(raw) => Some(raw.parse::<Label>().map_err(|e| malformed(path, rec.line, e))?),
        };
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id: rec.id,
                line: rec.line,
            });
        }
        examples.push(Example {
            id: rec.id,
            text: rec.text,
            label,
        });
    }
    let labeled = examples.iter().filter(|e| e.label.is_some()).count();
    if labeled != 0 && labeled != examples.len() {
        return Err(CorpusError::MixedLabeling {
            path: path.to_path_buf(),
            labeled,
            unlabeled: examples.len() - labeled,
        });
    }
    LabeledDataset::new(split_name, examples)
}

struct Columns {
    id: usize,
    text: usize,
    label: Option<usize>,
}

fn locate_columns<'a>(path: &Path, header: impl Iterator<Item = &'a str>) -> Result<Columns, CorpusError> {
    let (mut id, mut text, mut label) = (None, None, None);
    for (i, name) in header.enumerate() {
        match name.trim().trim_start_matches('\u{feff}') {
            "id" => id = Some(i),
            "text" => text = Some(i),
            "label" => label = Some(i),
            _ => {}
        }
    }
    match (id, text) {
        (Some(id), Some(text)) => Ok(Columns { id, text, label }),
        _ => Err(malformed(path, 1, "header must contain `id` and `text` columns")),
    }
}

fn read_tsv(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(io_err(path))?,
        None => return Ok(Vec::new()),
    };
    let header = header.strip_suffix('\r').unwrap_or(&header);
    let cols = locate_columns(path, header.split('\t'))?;
    let width = header.split('\t').count();

    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(io_err(path))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(malformed(
                path,
                line_no,
                format!(
                    "expected {width} tab-separated fields, found {} (tabs inside text require JSONL)",
                    fields.len()
                ),
            ));
        }
        out.push(RawRecord {
            line: line_no,
            id: fields[cols.id].to_string(),
            text: fields[cols.text].to_string(),
            label: cols.label.map(|c| fields[c].to_string()),
        });
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let cols = locate_columns(path, header.iter())?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| row.get(c).unwrap_or_default().to_string();
        out.push(RawRecord {
            line,
            id: field(cols.id),
            text: field(cols.text),
            label: cols.label.map(field),
        });
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> CorpusError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => {
                return CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
            _ => unreachable!(),
        }
    }
    malformed(path, line, e.to_string())
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(path, line_no, "record is not a JSON object"))?;
        let string_field = |key: &str| -> Result<String, CorpusError> {
            match obj.get(key) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(serde_json::Value::Number(n)) if key == "id" => Ok(n.to_string()),
                Some(_) => Err(malformed(path, line_no, format!("`{key}` must be a string"))),
                None => Ok(String::new()),
            }
        };
        let label = match obj.get("label") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::Number(n)) => match n.as_u64() {
                Some(v @ (0 | 1)) => Some(v.to_string()),
                _ => return Err(malformed(path, line_no, format!("label must be 0 or 1, got {n}"))),
            },
            Some(other) => {
                return Err(malformed(
                    path,
                    line_no,
                    format!("label must be the integer 0 or 1, got {other}"),
                ))
            }
        };
        out.push(RawRecord {
            line: line_no,
            id: string_field("id")?,
            text: string_field("text")?,
            label,
        });
    }
    Ok(out)
}

/// Write a split in the given format. Unlabeled splits omit the label column.
pub fn write_dataset(ds: &LabeledDataset, path: &Path, format: DatasetFormat) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        DatasetFormat::Tsv => write_tsv(ds, &mut w).map_err(|e| match e {
            TsvWriteError::Io(source) => CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            TsvWriteError::Corpus(c) => c,
        })?,
        DatasetFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            let res: Result<(), csv::Error> = (|| {
                if ds.is_labeled() {
                    cw.write_record(["id", "text", "label"])?;
                } else {
                    cw.write_record(["id", "text"])?;
                }
                for ex in ds.examples() {
                    match ex.label {
                        Some(l) => cw.write_record([&ex.id, &ex.text, &l.to_string()])?,
                        None => cw.write_record([&ex.id, &ex.text])?,
                    }
                }
                cw.flush()?;
                Ok(())
            })();
            res.map_err(|e| csv_err(path, e))?;
        }
        DatasetFormat::Jsonl => {
            for ex in ds.examples() {
                let line = serde_json::to_string(ex).expect("example serializes");
                writeln!(w, "{line}").map_err(io_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

enum TsvWriteError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

impl From<std::io::Error> for TsvWriteError {
    fn from(e: std::io::Error) -> Self {
        TsvWriteError::Io(e)
    }
}

fn write_tsv(ds: &LabeledDataset, w: &mut impl Write) -> Result<(), TsvWriteError> {
    if ds.is_labeled() {
        writeln!(w, "id\ttext\tlabel")?;
    } else {
        writeln!(w, "id\ttext")?;
    }
    for ex in ds.examples() {
        for (field, value) in [("id", &ex.id), ("text", &ex.text)] {
            if value.contains(['\t', '\n', '\r']) {
                return Err(TsvWriteError::Corpus(CorpusError::Unwritable {
                    id: ex.id.clone(),
                    format: DatasetFormat::Tsv,
                    reason: format!("{field} contains a tab or line break"),
                }));
            }
        }
        match ex.label {
            Some(l) => writeln!(w, "{}\t{}\t{}", ex.id, ex.text, l)?,
            None => writeln!(w, "{}\t{}", ex.id, ex.text)?,
        }
    }
    Ok(())
}
