//! Presence and attribute disclosure attacks against a synthetic dataset.
//!
//! Records are packed into `u64` bitsets so hamming distances reduce to
//! xor + popcount. Distance ties between synthetic records are broken by
//! ascending row index, and an even split of neighbour votes yields 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const DEFAULT_COMPROMISED_FRACTION: f64 = 0.01;

/// Number of positions at which two binary vectors differ.
pub fn hamming(a: &[f64], b: &[f64]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "hamming distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Rows of a binary matrix packed 64 columns per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBits {
    words: usize,
    bits: usize,
    data: Vec<u64>,
}

impl PackedBits {
    pub fn from_matrix(x: &Matrix) -> Self {
        let words = x.cols().div_ceil(64).max(1);
        let mut data = vec![0u64; x.rows() * words];
        for (i, r) in x.row_iter().enumerate() {
            let row = &mut data[i * words..(i + 1) * words];
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    row[j / 64] |= 1 << (j % 64);
                }
            }
        }
        PackedBits {
            words,
            bits: x.cols(),
            data,
        }
    }

    /// A single-row mask with the given columns set.
    pub fn mask(bits: usize, columns: &[usize]) -> Self {
        let words = bits.div_ceil(64).max(1);
        let mut data = vec![0u64; words];
        for &j in columns {
            data[j / 64] |= 1 << (j % 64);
        }
        PackedBits { words, bits, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.words
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row(i)[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn distance(a: &[u64], b: &[u64]) -> usize {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x ^ y).count_ones() as usize)
            .sum()
    }

    pub fn masked_distance(a: &[u64], b: &[u64], mask: &[u64]) -> usize {
        a.iter()
            .zip(b)
            .zip(mask)
            .map(|((x, y), m)| ((x ^ y) & m).count_ones() as usize)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresenceAttackConfig {
    /// Records drawn from each of R and T.
    pub sample_sizes: Vec<usize>,
    /// Hamming thresholds, ascending.
    pub thresholds: Vec<usize>,
    /// Prefix sizes of the shuffled synthetic set; empty means all of S.
    #[serde(default)]
    pub synthetic_sizes: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeAttackConfig {
    pub compromised_fraction: f64,
    /// Numbers of attributes known to the attacker.
    pub known_attributes: Vec<usize>,
    /// Neighbour counts for the majority vote.
    pub neighbors: Vec<usize>,
    #[serde(default)]
    pub synthetic_sizes: Vec<usize>,
    pub seed: u64,
}

/// One parameter setting of an attack sweep.
///
/// For attribute disclosure the counts are summed over compromised records
/// and the rates are per-record means; records with an undefined rate are
/// left out of that mean and counted in the `*_excluded` fields.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub params: Vec<usize>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity_excluded: usize,
    pub precision_excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub param_names: Vec<String>,
    pub rows: Vec<AttackRow>,
}

impl AttackReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::Format(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header: Vec<&str> = self.param_names.iter().map(String::as_str).collect();
        header.extend([
            "tp",
            "fp",
            "tn",
            "fn",
            "sensitivity",
            "precision",
            "sensitivity_excluded",
            "precision_excluded",
        ]);
        w.write_record(&header).map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let mut rec: Vec<String> = row.params.iter().map(usize::to_string).collect();
            rec.extend([
                row.tp.to_string(),
                row.fp.to_string(),
                row.tn.to_string(),
                row.fn_.to_string(),
                opt(row.sensitivity),
                opt(row.precision),
                row.sensitivity_excluded.to_string(),
                row.precision_excluded.to_string(),
            ]);
            w.write_record(&rec).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_binary(sets: &[&RecordDataset]) -> Result<()> {
    for d in sets {
        d.require_kind(DataKind::Binary)?;
        sets[0].require_same_vocabulary(d)?;
    }
    Ok(())
}

fn synthetic_sizes(requested: &[usize], available: usize) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok(vec![available]);
    }
    for &n in requested {
        if n == 0 || n > available {
            return Err(Error::invalid(format!(
                "synthetic size {n} outside 1..={available}"
            )));
        }
    }
    Ok(requested.to_vec())
}

/// Smallest distance from each query row to the first `n` rows of `synth`.
fn min_distances(queries: &PackedBits, synth: &PackedBits, n: usize) -> Vec<usize> {
    (0..queries.rows())
        .map(|i| {
            let q = queries.row(i);
            (0..n)
                .map(|j| PackedBits::distance(q, synth.row(j)))
                .min()
                .unwrap_or(usize::MAX)
        })
        .collect()
}

/// Presence outcome for fixed member (`real`) and non-member (`test`)
/// samples: a record is claimed present iff some synthetic record lies
/// within `threshold`.
pub fn presence_counts(real_min: &[usize], test_min: &[usize], threshold: usize) -> AttackRow {
    let tp = real_min.iter().filter(|&&d| d <= threshold).count();
    let fp = test_min.iter().filter(|&&d| d <= threshold).count();
    let fn_ = real_min.len() - tp;
    let tn = test_min.len() - fp;
    AttackRow {
        params: vec![threshold],
        tp,
        fp,
        tn,
        fn_,
        sensitivity: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        sensitivity_excluded: 0,
        precision_excluded: 0,
    }
}

/// Sweeps sample size, synthetic size and threshold. Smaller samples and
/// synthetic sizes are prefixes of the larger ones under the config seed.
pub fn presence_disclosure(
    real: &RecordDataset,
    test: &RecordDataset,
    synth: &RecordDataset,
    cfg: &PresenceAttackConfig,
) -> Result<AttackReport> {
    check_binary(&[real, test, synth])?;
    if cfg.thresholds.is_empty() || cfg.sample_sizes.is_empty() {
        return Err(Error::invalid(
            "presence attack needs thresholds and sample sizes",
        ));
    }
    if cfg.thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("thresholds must be strictly ascending"));
    }
    let limit = real.len().min(test.len());
    if let Some(&r) = cfg.sample_sizes.iter().find(|&&r| r == 0 || r > limit) {
        return Err(Error::invalid(format!(
            "sample size {r} outside 1..={limit}"
        )));
    }
    let sizes = synthetic_sizes(&cfg.synthetic_sizes, synth.len())?;

    let mut rng = Rng::new(cfg.seed);
    let s_order = rng.permutation(synth.len());
    let r_order = rng.permutation(real.len());
    let t_order = rng.permutation(test.len());
    let s_bits = PackedBits::from_matrix(&synth.matrix().select_rows(&s_order));

    let mut rows = Vec::new();
    for &r in &cfg.sample_sizes {
        let r_bits = PackedBits::from_matrix(&real.matrix().select_rows(&r_order[..r]));
        let t_bits = PackedBits::from_matrix(&test.matrix().select_rows(&t_order[..r]));
        for &n in &sizes {
            let real_min = min_distances(&r_bits, &s_bits, n);
            let test_min = min_distances(&t_bits, &s_bits, n);
            for &threshold in &cfg.thresholds {
                let mut row = presence_counts(&real_min, &test_min, threshold);
                row.params = vec![r, n, threshold];
                rows.push(row);
            }
        }
    }
    Ok(AttackReport {
        param_names: vec![
            "sample_size".into(),
            "synthetic_size".into(),
            "threshold".into(),
        ],
        rows,
    })
}

/// Attribute attack for explicit known-attribute sets, one per record,
/// against the first `n_synth` synthetic rows, for each `k`.
pub fn attribute_counts(
    records: &PackedBits,
    known: &[Vec<usize>],
    synth: &PackedBits,
    n_synth: usize,
    neighbors: &[usize],
) -> Result<Vec<AttackRow>> {
    if known.len() != records.rows() {
        return Err(Error::invalid(
            "one known-attribute set per record is required",
        ));
    }
    let max_k = neighbors.iter().copied().max().unwrap_or(0);
    if neighbors.contains(&0) || max_k > n_synth {
        return Err(Error::invalid(format!(
            "neighbour counts must lie in 1..={n_synth}"
        )));
    }
    let bits = records.bits();
    let mut rows: Vec<AttackRow> = neighbors
        .iter()
        .map(|&k| AttackRow {
            params: vec![k],
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
            sensitivity: None,
            precision: None,
            sensitivity_excluded: 0,
            precision_excluded: 0,
        })
        .collect();
    let mut sens_sum = vec![0.0; neighbors.len()];
    let mut prec_sum = vec![0.0; neighbors.len()];

    for (i, known_set) in known.iter().enumerate() {
        if known_set.iter().any(|&j| j >= bits) {
            return Err(Error::invalid("known attribute index out of range"));
        }
        let mask = PackedBits::mask(bits, known_set);
        let rec = records.row(i);
        let mut order: Vec<(usize, usize)> = (0..n_synth)
            .map(|j| {
                (
                    PackedBits::masked_distance(rec, synth.row(j), mask.row(0)),
                    j,
                )
            })
            .collect();
        order.sort_unstable();
        let unknown: Vec<usize> = (0..bits).filter(|&j| !mask.get(0, j)).collect();

        for (slot, &k) in neighbors.iter().enumerate() {
            let nearest = &order[..k];
            let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
            for &j in &unknown {
                let votes = nearest.iter().filter(|&&(_, s)| synth.get(s, j)).count();
                let claim = 2 * votes > k;
                match (claim, records.get(i, j)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
            let row = &mut rows[slot];
            row.tp += tp;
            row.fp += fp;
            row.tn += tn;
            row.fn_ += fn_;
            match ratio(tp, tp + fn_) {
                Some(v) => sens_sum[slot] += v,
                None => row.sensitivity_excluded += 1,
            }
            match ratio(tp, tp + fp) {
                Some(v) => prec_sum[slot] += v,
                None => row.precision_excluded += 1,
            }
        }
    }
    for (slot, row) in rows.iter_mut().enumerate() {
        row.sensitivity =
            ratio(1, known.len() - row.sensitivity_excluded).map(|w| sens_sum[slot] * w);
        row.precision = ratio(1, known.len() - row.precision_excluded).map(|w| prec_sum[slot] * w);
    }
    Ok(rows)
}

/// Samples the compromised records and, per record and per `s`, an
/// independent set of known attributes, then sweeps `s`, synthetic size
/// and `k`.
pub fn attribute_disclosure(
    real: &RecordDataset,
    synth: &RecordDataset,
    cfg: &AttributeAttackConfig,
) -> Result<AttackReport> {
    check_binary(&[real, synth])?;
    if !(cfg.compromised_fraction > 0.0 && cfg.compromised_fraction <= 1.0) {
        return Err(Error::invalid("compromised fraction must lie in (0, 1]"));
    }
    if cfg.known_attributes.is_empty() || cfg.neighbors.is_empty() {
        return Err(Error::invalid(
            "attribute attack needs known-attribute and neighbour counts",
        ));
    }
    let dims = real.dims();
    if let Some(&s) = cfg.known_attributes.iter().find(|&&s| s == 0 || s >= dims) {
        return Err(Error::invalid(format!(
            "known attributes {s} outside 1..{dims}"
        )));
    }
    if real.is_empty() {
        return Err(Error::invalid(
            "attribute attack needs at least one real record",
        ));
    }
    let sizes = synthetic_sizes(&cfg.synthetic_sizes, synth.len())?;

    let mut rng = Rng::new(cfg.seed);
    let s_order = rng.permutation(synth.len());
    let compromised = ((cfg.compromised_fraction * real.len() as f64).round() as usize).max(1);
    let victims = rng.sample_indices(real.len(), compromised);
    let records = PackedBits::from_matrix(&real.matrix().select_rows(&victims));
    let s_bits = PackedBits::from_matrix(&synth.matrix().select_rows(&s_order));

    let mut rows = Vec::new();
    for &s in &cfg.known_attributes {
        let known: Vec<Vec<usize>> = (0..compromised)
            .map(|_| rng.sample_indices(dims, s))
            .collect();
        for &n in &sizes {
            for mut row in attribute_counts(&records, &known, &s_bits, n, &cfg.neighbors)? {
                row.params = vec![s, n, row.params[0]];
                rows.push(row);
            }
        }
    }
    Ok(AttackReport {
        param_names: vec![
            "known_attributes".into(),
            "synthetic_size".into(),
            "k".into(),
        ],
        rows,
    })
}
