//! Record datasets: vocabulary, patient-by-code matrices, ingestion, splits,
//! ground-truth corpora and checkpoint persistence.

mod checkpoint;
mod corpus;
mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointBlock, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use corpus::{synth_corpus, GroundTruthModel, DEFAULT_COUNT_CAP};
pub use io::{load_records, load_vocabulary, save_records, save_vocabulary};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Whether records hold code presence or code occurrence counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Binary,
    Count,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Binary => "binary",
            DataKind::Count => "count",
        })
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(DataKind::Binary),
            "count" => Ok(DataKind::Count),
            other => Err(Error::invalid(format!("unknown data kind `{other}`"))),
        }
    }
}

/// Ordered list of codes; position `i` is dimension `i` of every record.
#[derive(Clone, Debug, Default)]
pub struct CodeVocabulary {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for CodeVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.codes == other.codes
    }
}

impl CodeVocabulary {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate code `{c}` in vocabulary"
                )));
            }
        }
        Ok(CodeVocabulary { codes, index })
    }

    /// `c0, c1, ...` with `n` entries.
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("c{i}")).collect()).expect("generated codes are unique")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn code(&self, dim: usize) -> &str {
        &self.codes[dim]
    }

    pub fn dim(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }
}

/// `N x |C|` matrix of non-negative integers plus its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordDataset {
    x: Matrix,
    kind: DataKind,
    vocab: CodeVocabulary,
    ids: Option<Vec<String>>,
}

impl RecordDataset {
    /// Validates the kind invariants: `{0,1}` for binary, non-negative
    /// integers for counts.
    pub fn new(x: Matrix, kind: DataKind, vocab: CodeVocabulary) -> Result<Self> {
        if x.cols() != vocab.len() {
            return Err(Error::VocabularyMismatch(format!(
                "matrix has {} columns but vocabulary has {} codes",
                x.cols(),
                vocab.len()
            )));
        }
        for (i, r) in x.row_iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                let ok = match kind {
                    DataKind::Binary => v == 0.0 || v == 1.0,
                    DataKind::Count => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
                };
                if !ok {
                    return Err(Error::invalid(format!(
                        "entry ({i}, {j}) = {v} is not a valid {kind} value"
                    )));
                }
            }
        }
        Ok(RecordDataset {
            x,
            kind,
            vocab,
            ids: None,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.x.rows() {
            return Err(Error::invalid(format!(
                "{} ids for {} records",
                ids.len(),
                self.x.rows()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn vocabulary(&self) -> &CodeVocabulary {
        &self.vocab
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.x.cols()
    }

    /// Column means: Bernoulli success probabilities for binary data,
    /// average counts for count data.
    pub fn column_means(&self) -> Vec<f64> {
        self.x.column_means()
    }

    pub fn select(&self, indices: &[usize]) -> RecordDataset {
        RecordDataset {
            x: self.x.select_rows(indices),
            kind: self.kind,
            vocab: self.vocab.clone(),
            ids: self
                .ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect()),
        }
    }

    /// First `n` records (all of them if `n >= len`).
    pub fn prefix(&self, n: usize) -> RecordDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn require_kind(&self, kind: DataKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected {kind} records, got {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn require_same_vocabulary(&self, other: &RecordDataset) -> Result<()> {
        if self.vocab != other.vocab {
            return Err(Error::VocabularyMismatch(format!(
                "datasets have {} and {} codes with differing order or content",
                self.vocab.len(),
                other.vocab.len()
            )));
        }
        Ok(())
    }
}

/// Maps counts to presence indicators.
pub fn binarize(d: &RecordDataset) -> RecordDataset {
    RecordDataset {
        x: d.x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        kind: DataKind::Binary,
        vocab: d.vocab.clone(),
        ids: d.ids.clone(),
    }
}

/// Seeded shuffle, then the first `round(ratio * N)` records become the
/// training part. Both parts are kept non-empty.
pub fn split(
    d: &RecordDataset,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(RecordDataset, RecordDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio {ratio} must lie in (0, 1)"
        )));
    }
    let n = d.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} record(s)")));
    }
    let perm = rng.permutation(n);
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    Ok((d.select(&perm[..n_train]), d.select(&perm[n_train..])))
}
