//! Diagnosis metrics: confusion matrix, accuracy, per-class detection and
//! false-alarm rates, per-mode breakdowns, and the worst-of-runs selection
//! rule used for reporting.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DacnError, Result};

/// Row = true class, column = predicted class.
pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Array2<usize>> {
    if truth.len() != pred.len() {
        return Err(DacnError::Shape(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = Array2::zeros((n_classes, n_classes));
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(DacnError::InvalidArgument(format!(
                "label ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        m[[t, p]] += 1;
    }
    Ok(m)
}

/// Trace over total of a confusion matrix.
pub fn accuracy(confusion: &Array2<usize>) -> f64 {
    let total: usize = confusion.sum();
    if total == 0 {
        return f64::NAN;
    }
    let trace: usize = (0..confusion.nrows()).map(|i| confusion[[i, i]]).sum();
    trace as f64 / total as f64
}

/// A rate whose denominator can be empty. Undefined rates are excluded from
/// averages rather than treated as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    Defined(f64),
    Undefined,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rate::Defined(v) => Some(*v),
            Rate::Undefined => None,
        }
    }
}

/// Fault detection rate per class: of the samples truly in class `c`, the
/// fraction predicted as `c`. Undefined when the class has no samples.
pub fn fdr(confusion: &Array2<usize>) -> Vec<Rate> {
    (0..confusion.nrows())
        .map(|c| {
            let row: usize = confusion.row(c).sum();
            if row == 0 {
                Rate::Undefined
            } else {
                Rate::Defined(confusion[[c, c]] as f64 / row as f64)
            }
        })
        .collect()
}

/// False alarm rate per class: of the samples truly *not* in class `c`, the
/// fraction predicted as `c`. Undefined when every sample is in class `c`.
pub fn fpr(confusion: &Array2<usize>) -> Vec<Rate> {
    let total: usize = confusion.sum();
    (0..confusion.ncols())
        .map(|c| {
            let in_class: usize = confusion.row(c).sum();
            let negatives = total - in_class;
            if negatives == 0 {
                Rate::Undefined
            } else {
                let col: usize = confusion.column(c).sum();
                let false_pos = col - confusion[[c, c]];
                Rate::Defined(false_pos as f64 / negatives as f64)
            }
        })
        .collect()
}

/// Mean over the defined rates only; `None` when all are undefined.
pub fn mean_rate(rates: &[Rate]) -> Option<f64> {
    let defined: Vec<f64> = rates.iter().filter_map(Rate::value).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Accuracy restricted to each mode's samples.
pub fn per_mode_accuracy(
    truth: &[usize],
    pred: &[usize],
    mode_ids: &[String],
) -> Result<BTreeMap<String, f64>> {
    if truth.len() != pred.len() || truth.len() != mode_ids.len() {
        return Err(DacnError::Shape("label/prediction/mode length mismatch".into()));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((&t, &p), m) in truth.iter().zip(pred).zip(mode_ids) {
        let e = counts.entry(m.clone()).or_insert((0, 0));
        e.1 += 1;
        if t == p {
            e.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(m, (c, n))| (m, c as f64 / n as f64))
        .collect())
}

/// One run's headline numbers inside a repeated experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunScore {
    pub seed: u64,
    pub test1_acc: f64,
    pub test2_acc: f64,
}

/// The reporting rule for repeated runs: take the run with the worst
/// unseen-mode accuracy; ties resolve to the earliest seed.
pub fn worst_of_runs(runs: &[RunScore]) -> Result<&RunScore> {
    runs.iter()
        .min_by(|a, b| {
            a.test2_acc
                .partial_cmp(&b.test2_acc)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.seed.cmp(&b.seed))
        })
        .ok_or_else(|| DacnError::MissingData("no runs to score".into()))
}

/// Full metrics bundle for one evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub fdr: Vec<Rate>,
    pub fpr: Vec<Rate>,
    pub mean_fdr: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub per_mode_accuracy: BTreeMap<String, f64>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn report(
    truth: &[usize],
    pred: &[usize],
    mode_ids: &[String],
    n_classes: usize,
) -> Result<MetricsReport> {
    let m = confusion(truth, pred, n_classes)?;
    let fdr_v = fdr(&m);
    let fpr_v = fpr(&m);
    Ok(MetricsReport {
        n_samples: truth.len(),
        n_classes,
        accuracy: accuracy(&m),
        mean_fdr: mean_rate(&fdr_v),
        mean_fpr: mean_rate(&fpr_v),
        fdr: fdr_v,
        fpr: fpr_v,
        per_mode_accuracy: per_mode_accuracy(truth, pred, mode_ids)?,
        confusion: m.rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}

/// Write embeddings with labels and modes as CSV, for external projection
/// or clustering tools.
pub fn export_features(
    g: &Array2<f64>,
    labels: &[usize],
    mode_ids: &[String],
    path: &Path,
) -> Result<()> {
    if g.nrows() != labels.len() || labels.len() != mode_ids.len() {
        return Err(DacnError::Shape("feature/label/mode length mismatch".into()));
    }
    let mut out = String::from("label,mode");
    for j in 0..g.ncols() {
        out.push_str(&format!(",g{j}"));
    }
    out.push('\n');
    for (i, (y, m)) in labels.iter().zip(mode_ids).enumerate() {
        out.push_str(&format!("{y},{m}"));
        for v in g.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
