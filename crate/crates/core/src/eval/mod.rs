//! Fidelity metrics comparing real and synthetic datasets.

mod logistic;

pub use logistic::{
    f1_score, logistic_loss_and_grad, train_logistic_regression, LogisticModel, DEFAULT_L2,
    LR_GRAD_TOLERANCE, LR_LEARNING_RATE, LR_MAX_ITERATIONS,
};

use std::path::Path;

use serde::Serialize;

use crate::data::{DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A real and a synthetic statistic for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimStat {
    pub dim_index: usize,
    pub code: String,
    pub real_stat: f64,
    pub synth_stat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimStatSummary {
    pub pearson: f64,
    pub max_dev: f64,
    pub mean_dev: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_f1_real: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_f1_synth: Option<f64>,
    /// Dimensions whose labels were single-class in R or S (prediction only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub constant_dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DimStatReport {
    pub pairs: Vec<DimStat>,
    pub summary: DimStatSummary,
}

/// Pearson correlation. When either side has zero variance the value is 1
/// for identical sequences and 0 otherwise. Clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal lengths");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

impl DimStatReport {
    fn build(data: &RecordDataset, dims: &[usize], real: Vec<f64>, synth: Vec<f64>) -> Self {
        let vocab = data.vocabulary();
        let pairs: Vec<DimStat> = dims
            .iter()
            .zip(real.iter().zip(&synth))
            .map(|(&k, (&r, &s))| DimStat {
                dim_index: k,
                code: vocab.code(k).to_string(),
                real_stat: r,
                synth_stat: s,
            })
            .collect();
        let devs: Vec<f64> = pairs
            .iter()
            .map(|p| (p.real_stat - p.synth_stat).abs())
            .collect();
        let summary = DimStatSummary {
            pearson: pearson(&real, &synth),
            max_dev: devs.iter().cloned().fold(0.0, f64::max),
            mean_dev: if devs.is_empty() {
                0.0
            } else {
                devs.iter().sum::<f64>() / devs.len() as f64
            },
            mean_f1_real: None,
            mean_f1_synth: None,
            constant_dims: Vec::new(),
        };
        DimStatReport { pairs, summary }
    }

    pub fn real(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.real_stat).collect()
    }

    pub fn synth(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.synth_stat).collect()
    }

    /// CSV with columns `dim_index,code,real_stat,synth_stat`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| Error::Format(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for p in &self.pairs {
            w.serialize(p).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Per-code success probability in R (x) against S (y).
pub fn dimension_wise_probability(
    real: &RecordDataset,
    synth: &RecordDataset,
) -> Result<DimStatReport> {
    real.require_kind(DataKind::Binary)?;
    synth.require_kind(DataKind::Binary)?;
    real.require_same_vocabulary(synth)?;
    let dims: Vec<usize> = (0..real.dims()).collect();
    Ok(DimStatReport::build(
        real,
        &dims,
        real.column_means(),
        synth.column_means(),
    ))
}

/// Per-code average count in R (x) against S (y).
pub fn dimension_wise_average_count(
    real: &RecordDataset,
    synth: &RecordDataset,
) -> Result<DimStatReport> {
    real.require_kind(DataKind::Count)?;
    synth.require_kind(DataKind::Count)?;
    real.require_same_vocabulary(synth)?;
    let dims: Vec<usize> = (0..real.dims()).collect();
    Ok(DimStatReport::build(
        real,
        &dims,
        real.column_means(),
        synth.column_means(),
    ))
}

fn label_columns(x: &Matrix, dims: &[usize]) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), dims.len());
    for i in 0..x.rows() {
        let (src, dst) = (x.row(i), y.row_mut(i));
        for (j, &k) in dims.iter().enumerate() {
            dst[j] = if src[k] > 0.0 { 1.0 } else { 0.0 };
        }
    }
    y
}

fn drop_column(x: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols() - 1);
    for i in 0..x.rows() {
        let (src, dst) = (x.row(i), out.row_mut(i));
        dst[..k].copy_from_slice(&src[..k]);
        dst[k..].copy_from_slice(&src[k + 1..]);
    }
    out
}

/// For each requested dimension `k`, fits a logistic regression predicting
/// `[x_k > 0]` from the other codes, once on R and once on S, and scores both
/// on T by F1 at 0.5. Pairs are `(F1 of the R model, F1 of the S model)`.
/// `dims = None` evaluates every dimension.
pub fn dimension_wise_prediction(
    real: &RecordDataset,
    synth: &RecordDataset,
    test: &RecordDataset,
    dims: Option<&[usize]>,
    l2: f64,
) -> Result<DimStatReport> {
    real.require_same_vocabulary(synth)?;
    real.require_same_vocabulary(test)?;
    if real.kind() != synth.kind() || real.kind() != test.kind() {
        return Err(Error::invalid(
            "real, synthetic and test data must share a kind",
        ));
    }
    if real.dims() < 2 {
        return Err(Error::invalid(
            "dimension-wise prediction needs at least two codes",
        ));
    }
    let all: Vec<usize> = (0..real.dims()).collect();
    let dims = dims.unwrap_or(&all);
    if let Some(&bad) = dims.iter().find(|&&k| k >= real.dims()) {
        return Err(Error::invalid(format!(
            "dimension {bad} outside the vocabulary"
        )));
    }
    let mask: Vec<Option<usize>> = dims.iter().map(|&k| Some(k)).collect();
    let fit = |d: &RecordDataset| {
        logistic::fit_batch(d.matrix(), &label_columns(d.matrix(), dims), &mask, l2)
    };
    let (models_r, models_s) = (fit(real), fit(synth));
    let t = test.matrix();
    let t_labels = label_columns(t, dims);
    let mut f1_r = Vec::with_capacity(dims.len());
    let mut f1_s = Vec::with_capacity(dims.len());
    let mut constant_dims = Vec::new();
    for (j, &k) in dims.iter().enumerate() {
        let features = drop_column(t, k);
        let labels = t_labels.column(j);
        f1_r.push(f1_score(
            &models_r[j].predict_proba(&features),
            &labels,
            0.5,
        ));
        f1_s.push(f1_score(
            &models_s[j].predict_proba(&features),
            &labels,
            0.5,
        ));
        if models_r[j].constant || models_s[j].constant {
            constant_dims.push(k);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (mr, ms) = (mean(&f1_r), mean(&f1_s));
    let mut report = DimStatReport::build(real, dims, f1_r, f1_s);
    report.summary.mean_f1_real = Some(mr);
    report.summary.mean_f1_synth = Some(ms);
    report.summary.constant_dims = constant_dims;
    Ok(report)
}

/// Count distribution of one code: bins `0..=max_count` then an overflow bin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodeHistogram {
    pub dim_index: usize,
    pub code: String,
    pub bins: Vec<usize>,
}

impl CodeHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().sum()
    }

    /// Total-variation distance between the normalised histograms.
    pub fn tv_distance(&self, other: &CodeHistogram) -> f64 {
        assert_eq!(
            self.bins.len(),
            other.bins.len(),
            "histograms need matching bins"
        );
        let (a, b) = (self.total().max(1) as f64, other.total().max(1) as f64);
        0.5 * self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(&x, &y)| (x as f64 / a - y as f64 / b).abs())
            .sum::<f64>()
    }
}

/// Indices of the `top_n` codes with the largest column sums (ties go to the
/// lower index).
pub fn top_codes(data: &RecordDataset, top_n: usize) -> Vec<usize> {
    let sums = data.matrix().column_sums();
    let mut idx: Vec<usize> = (0..sums.len()).collect();
    idx.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    idx.truncate(top_n);
    idx
}

/// Histograms of the given codes.
pub fn histograms_for(
    data: &RecordDataset,
    dims: &[usize],
    max_count: usize,
) -> Result<Vec<CodeHistogram>> {
    data.require_kind(DataKind::Count)?;
    let x = data.matrix();
    dims.iter()
        .map(|&k| {
            if k >= x.cols() {
                return Err(Error::invalid(format!(
                    "dimension {k} outside the vocabulary"
                )));
            }
            let mut bins = vec![0usize; max_count + 2];
            for r in x.row_iter() {
                bins[(r[k] as usize).min(max_count + 1)] += 1;
            }
            Ok(CodeHistogram {
                dim_index: k,
                code: data.vocabulary().code(k).to_string(),
                bins,
            })
        })
        .collect()
}

/// Histograms of the `top_n` most frequent codes.
pub fn count_histograms(
    data: &RecordDataset,
    top_n: usize,
    max_count: usize,
) -> Result<Vec<CodeHistogram>> {
    histograms_for(data, &top_codes(data, top_n), max_count)
}

/// CSV with columns `dim_index,code,bin,real,synth`; the overflow bin is
/// labelled `>max_count`.
pub fn write_histogram_csv(
    real: &[CodeHistogram],
    synth: &[CodeHistogram],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Format(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["dim_index", "code", "bin", "real", "synth"])
        .map_err(err)?;
    for (r, s) in real.iter().zip(synth) {
        let last = r.bins.len() - 1;
        for b in 0..r.bins.len() {
            let label = if b == last {
                format!(">{}", last - 1)
            } else {
                b.to_string()
            };
            w.write_record([
                r.dim_index.to_string(),
                r.code.clone(),
                label,
                r.bins[b].to_string(),
                s.bins[b].to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
