//! Sliding-window time-series expansion: each sample carries the current
//! moment plus the previous k-1 moments of every channel.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::cstr::RawSeries;
use crate::error::{DacnError, Result};

/// How a window straddling the fault onset is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LabelPolicy {
    /// Fault class as soon as the window's last sample is at or past onset.
    #[default]
    WindowEnd,
    /// Fault class only once the whole window is past onset.
    WindowStart,
}

/// A collection of windowed samples: `x` is (n, v, k), standardized and
/// unitless; labels are health classes; `mode_ids` tag provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Array3<f64>,
    pub labels: Vec<usize>,
    pub mode_ids: Vec<String>,
}

impl SampleSet {
    pub fn empty(v: usize, k: usize) -> Self {
        Self {
            x: Array3::zeros((0, v, k)),
            labels: Vec::new(),
            mode_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_shape(&self) -> (usize, usize) {
        (self.x.shape()[1], self.x.shape()[2])
    }

    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let views: Vec<_> = indices
            .iter()
            .map(|&i| self.x.index_axis(Axis(0), i))
            .collect();
        let x = if views.is_empty() {
            Array3::zeros((0, self.x.shape()[1], self.x.shape()[2]))
        } else {
            ndarray::stack(Axis(0), &views).expect("uniform window shapes")
        };
        SampleSet {
            x,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            mode_ids: indices.iter().map(|&i| self.mode_ids[i].clone()).collect(),
        }
    }

    pub fn concat(sets: &[&SampleSet]) -> Result<SampleSet> {
        let non_empty: Vec<_> = sets.iter().filter(|s| !s.is_empty()).collect();
        let Some(first) = non_empty.first() else {
            let (v, k) = sets
                .first()
                .map(|s| s.window_shape())
                .unwrap_or((0, 0));
            return Ok(SampleSet::empty(v, k));
        };
        let shape = first.window_shape();
        for s in &non_empty {
            if s.window_shape() != shape {
                return Err(DacnError::Shape(format!(
                    "cannot concat window shapes {:?} and {:?}",
                    shape,
                    s.window_shape()
                )));
            }
        }
        let views: Vec<_> = non_empty.iter().map(|s| s.x.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        let mut labels = Vec::new();
        let mut mode_ids = Vec::new();
        for s in &non_empty {
            labels.extend_from_slice(&s.labels);
            mode_ids.extend_from_slice(&s.mode_ids);
        }
        Ok(SampleSet { x, labels, mode_ids })
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distinct_classes(&self) -> Vec<usize> {
        let mut cs: Vec<usize> = self.labels.clone();
        cs.sort_unstable();
        cs.dedup();
        cs
    }
}

/// Stride-1 sliding windows of length `k`. Yields `n_steps - k + 1` samples;
/// each window is the v x k transpose of the corresponding row block. The
/// series label is its fault class; windows before the onset (per the
/// policy) are labeled healthy (class 0).
pub fn window(
    series: &RawSeries,
    k: usize,
    fault_label: usize,
    onset: f64,
    policy: LabelPolicy,
) -> Result<SampleSet> {
    let n = series.n_steps();
    let v = series.n_channels();
    if k == 0 {
        return Err(DacnError::InvalidArgument("window length must be positive".into()));
    }
    if n < k {
        return Err(DacnError::InvalidArgument(format!(
            "series has {n} steps, shorter than window length {k}"
        )));
    }
    let n_windows = n - k + 1;
    let mut x = Array3::zeros((n_windows, v, k));
    let mut labels = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        for ch in 0..v {
            for j in 0..k {
                x[[w, ch, j]] = series.channels[[w + j, ch]];
            }
        }
        let pivot = match policy {
            LabelPolicy::WindowEnd => series.times[w + k - 1],
            LabelPolicy::WindowStart => series.times[w],
        };
        labels.push(if fault_label != 0 && pivot >= onset {
            fault_label
        } else {
            0
        });
    }
    Ok(SampleSet {
        x,
        labels,
        mode_ids: vec![series.mode_id.clone(); n_windows],
    })
}

/// Flatten a window back to rows (k x v); test helper for round trips.
pub fn window_rows(x: &ndarray::ArrayView2<f64>) -> Array2<f64> {
    x.t().to_owned()
}
