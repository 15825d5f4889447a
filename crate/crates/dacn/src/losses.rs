//! The four training terms and their exact gradients.
//!
//! All terms are computed over one forward pass: classification
//! cross-entropy on the seen rows (`Lc1`) and on the pseudo rows (`Lc2`),
//! supervised contrastive loss over the combined embedding batch (`Lsup`),
//! and the discriminator's real/fake log loss (`Ld`). The three objectives
//! are weighted combinations:
//!
//! - `L1 = l1*Lc1 + l2*Lc2 + l3*Lsup - l4*Ld` (extractor, invariant
//!   extractor, classifier),
//! - `L2 = Ld` (discriminator),
//! - `L3 = l1*Lc2 + l3*Lsup + l4*Ld` (feature transformer).
//!
//! Gradients are produced per term so each objective can combine them with
//! its own coefficients and route them through one backward pass.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{DacnError, Result};
use crate::model::HeadGrads;

/// Guard for logs of probabilities; sigmoid/softmax outputs can underflow.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// L2-normalize embeddings before the contrastive similarities.
    pub supcon_normalize: bool,
    /// Weight the pseudo-sample cross-entropy in the transformer objective
    /// with `lambda2` instead of `lambda1`.
    pub l3_uses_lambda2: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.68,
            lambda2: 0.35,
            // The contrastive and discriminative terms are unnormalized
            // batch sums, so their useful coefficient range sits well below
            // the coefficients quoted for batch-mean formulations; these
            // defaults were tuned on the CSTR benchmark at batch size 128.
            lambda3: 0.2,
            lambda4: 0.003,
            tau: 0.1,
            supcon_normalize: true,
            l3_uses_lambda2: false,
        }
    }
}

impl LossWeights {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        let w = Self {
            lambda1: cfg.f64_or("loss.lambda1", d.lambda1)?,
            lambda2: cfg.f64_or("loss.lambda2", d.lambda2)?,
            lambda3: cfg.f64_or("loss.lambda3", d.lambda3)?,
            lambda4: cfg.f64_or("loss.lambda4", d.lambda4)?,
            tau: cfg.f64_or("loss.tau", d.tau)?,
            supcon_normalize: cfg.bool_or("loss.supcon_normalize", d.supcon_normalize)?,
            l3_uses_lambda2: cfg.bool_or("loss.l3_uses_lambda2", d.l3_uses_lambda2)?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DacnError::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(DacnError::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood over `rows` of a probability matrix.
/// Returns the loss and its gradient with respect to the probabilities.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = labels.len();
    if probs.nrows() != n {
        return Err(DacnError::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            n
        )));
    }
    let l = probs.ncols();
    let mut loss = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        if y >= l {
            return Err(DacnError::InvalidArgument(format!(
                "label {y} out of range for {l} classes"
            )));
        }
        let p = probs[[i, y]].max(LOG_FLOOR);
        loss -= p.ln();
        grad[[i, y]] = -1.0 / (p * n as f64);
    }
    Ok((loss / n as f64, grad))
}

/// Supervised contrastive loss over an embedding batch.
///
/// Each row is an anchor; its positives are every other row with the same
/// label. Per anchor:
/// `-1/(R-1) * sum_{p in Pos(i)} log( exp(s_ip) / sum_{j != i} exp(s_ij) )`
/// with `s_ij = z_i . z_j / tau`, summed over anchors, where `R` is the
/// batch row count. Anchors with no positives contribute zero. Returns the
/// loss and its gradient with respect to the raw (pre-normalization)
/// embeddings.
pub fn supcon(
    embeds: &Array2<f64>,
    labels: &[usize],
    tau: f64,
    normalize: bool,
) -> Result<(f64, Array2<f64>)> {
    let rows = embeds.nrows();
    if labels.len() != rows {
        return Err(DacnError::Shape(format!(
            "{rows} embedding rows for {} labels",
            labels.len()
        )));
    }
    if rows < 2 {
        return Ok((0.0, Array2::zeros(embeds.raw_dim())));
    }

    // z = normalized embeddings (or raw, by configuration)
    let mut norms = Array1::ones(rows);
    let z = if normalize {
        let mut z = embeds.clone();
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt().max(LOG_FLOOR);
            norms[i] = n;
            row.mapv_inplace(|v| v / n);
        }
        z
    } else {
        embeds.clone()
    };

    // similarity matrix s_ij = z_i . z_j / tau
    let s = z.dot(&z.t()) / tau;
    let anchor_norm = 1.0 / (rows as f64 - 1.0);

    let mut loss = 0.0;
    // total dL/ds
    let mut ds = Array2::zeros((rows, rows));
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        // logsumexp over j != i
        let row = s.row(i);
        let max = (0..rows)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..rows)
            .filter(|&j| j != i)
            .map(|j| (row[j] - max).exp())
            .sum();
        let lse = max + denom.ln();
        let np = positives.len() as f64;
        for &p in &positives {
            loss -= anchor_norm * (row[p] - lse);
        }
        for j in 0..rows {
            if j == i {
                continue;
            }
            let softmax_ij = (row[j] - max).exp() / denom;
            let indicator = if labels[j] == labels[i] { 1.0 } else { 0.0 };
            ds[[i, j]] = -anchor_norm * (indicator - np * softmax_ij);
        }
    }

    // dL/dz_i = (1/tau) * sum_{j != i} (ds_ij + ds_ji) z_j
    let sym = (&ds + &ds.t()) / tau;
    let mut dz = sym.dot(&z);
    // remove the (zeroed) diagonal contribution explicitly: ds_ii = 0 already

    let grad = if normalize {
        // z = g/|g|  =>  dL/dg = (dz - (dz . z) z) / |g|
        let mut grad = Array2::zeros(embeds.raw_dim());
        for i in 0..rows {
            let zi = z.row(i);
            let gi = dz.row(i);
            let proj = gi.dot(&zi);
            for (k, gslot) in grad.row_mut(i).into_iter().enumerate() {
                *gslot = (gi[k] - proj * zi[k]) / norms[i];
            }
        }
        grad
    } else {
        dz.swap_axes(0, 0);
        dz
    };
    Ok((loss, grad))
}

/// Discriminator log loss: seen rows should score 1, pseudo rows 0.
/// Unnormalized sum, matching the printed objective. Returns the loss and
/// its gradient with respect to the discriminator outputs.
pub fn disc_loss(d: &Array1<f64>, n_seen: usize) -> Result<(f64, Array1<f64>)> {
    let rows = d.len();
    if n_seen > rows {
        return Err(DacnError::Shape(format!(
            "{n_seen} seen rows in a batch of {rows}"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array1::zeros(rows);
    for i in 0..rows {
        if i < n_seen {
            let p = d[i].max(LOG_FLOOR);
            loss -= p.ln();
            grad[i] = -1.0 / p;
        } else {
            let q = (1.0 - d[i]).max(LOG_FLOOR);
            loss -= q.ln();
            grad[i] = 1.0 / q;
        }
    }
    Ok((loss, grad))
}

/// Values of every term and the three objectives for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub lc1: f64,
    pub lc2: f64,
    pub lsup: f64,
    pub ld: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl BatchLosses {
    pub fn finite(&self) -> std::result::Result<(), &'static str> {
        for (name, v) in [
            ("Lc1", self.lc1),
            ("Lc2", self.lc2),
            ("Lsup", self.lsup),
            ("Ld", self.ld),
        ] {
            if !v.is_finite() {
                return Err(name);
            }
        }
        Ok(())
    }
}

/// Per-term gradients with respect to the head outputs, before objective
/// weighting. Shapes follow the concatenated [seen; pseudo] layout.
pub struct TermGrads {
    /// dLc1/dprobs (non-zero only on seen rows)
    pub dprobs_c1: Array2<f64>,
    /// dLc2/dprobs (non-zero only on pseudo rows)
    pub dprobs_c2: Array2<f64>,
    /// dLsup/dg
    pub dg_sup: Array2<f64>,
    /// dLd/dd
    pub dd: Array1<f64>,
}

impl TermGrads {
    /// Weighted combination for one objective's backward pass:
    /// `c1*Lc1 + c2*Lc2 + cs*Lsup + cd*Ld`.
    pub fn combine(&self, c1: f64, c2: f64, cs: f64, cd: f64) -> HeadGrads {
        HeadGrads {
            dprobs: c1 * &self.dprobs_c1 + c2 * &self.dprobs_c2,
            dg: cs * &self.dg_sup,
            dd: cd * &self.dd,
        }
    }
}

/// Evaluate every term over one training forward. `probs`, `g`, `d` cover
/// the 2B concatenated rows; `labels` covers the B seen samples (pseudo
/// rows inherit them).
pub fn batch_losses(
    probs: &Array2<f64>,
    g: &Array2<f64>,
    d: &Array1<f64>,
    labels: &[usize],
    w: &LossWeights,
) -> Result<(BatchLosses, TermGrads)> {
    let batch = labels.len();
    let rows = 2 * batch;
    if probs.nrows() != rows || g.nrows() != rows || d.len() != rows {
        return Err(DacnError::Shape(format!(
            "expected {rows} head rows for a batch of {batch}"
        )));
    }
    let seen = probs.slice(ndarray::s![..batch, ..]).to_owned();
    let pseudo = probs.slice(ndarray::s![batch.., ..]).to_owned();
    let (lc1, grad_c1) = cross_entropy(&seen, labels)?;
    let (lc2, grad_c2) = cross_entropy(&pseudo, labels)?;
    let mut dprobs_c1 = Array2::zeros(probs.raw_dim());
    dprobs_c1.slice_mut(ndarray::s![..batch, ..]).assign(&grad_c1);
    let mut dprobs_c2 = Array2::zeros(probs.raw_dim());
    dprobs_c2.slice_mut(ndarray::s![batch.., ..]).assign(&grad_c2);

    let full_labels: Vec<usize> = labels.iter().chain(labels.iter()).copied().collect();
    let (lsup, dg_sup) = supcon(g, &full_labels, w.tau, w.supcon_normalize)?;
    let (ld, dd) = disc_loss(d, batch)?;

    let l3_ce = if w.l3_uses_lambda2 { w.lambda2 } else { w.lambda1 };
    let losses = BatchLosses {
        lc1,
        lc2,
        lsup,
        ld,
        l1: w.lambda1 * lc1 + w.lambda2 * lc2 + w.lambda3 * lsup - w.lambda4 * ld,
        l2: ld,
        l3: l3_ce * lc2 + w.lambda3 * lsup + w.lambda4 * ld,
    };
    let grads = TermGrads {
        dprobs_c1,
        dprobs_c2,
        dg_sup,
        dd,
    };
    Ok((losses, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_hand_value() {
        let probs = array![[0.85, 0.10, 0.05], [0.20, 0.70, 0.10]];
        let (loss, grad) = cross_entropy(&probs, &[0, 1]).unwrap();
        let expected = -(0.85f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((grad[[0, 0]] + 1.0 / (0.85 * 2.0)).abs() < 1e-12);
        assert_eq!(grad[[0, 1]], 0.0);
    }

    #[test]
    fn cross_entropy_fd_check() {
        let probs = array![[0.6, 0.3, 0.1], [0.25, 0.25, 0.5]];
        let labels = [2usize, 0];
        let (_, grad) = cross_entropy(&probs, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = probs.clone();
                p[[i, j]] += eps;
                let (lp, _) = cross_entropy(&p, &labels).unwrap();
                p[[i, j]] -= 2.0 * eps;
                let (lm, _) = cross_entropy(&p, &labels).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - grad[[i, j]]).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn disc_loss_symmetric_half_is_two_ln_two() {
        let d = array![0.5, 0.5];
        let (loss, grad) = disc_loss(&d, 1).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 2.0).abs() < 1e-12);
        assert!((grad[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn disc_loss_fd_check() {
        let d = array![0.9, 0.3, 0.2, 0.6];
        let (_, grad) = disc_loss(&d, 2).unwrap();
        let eps = 1e-7;
        for i in 0..4 {
            let mut dp = d.clone();
            dp[i] += eps;
            let (lp, _) = disc_loss(&dp, 2).unwrap();
            dp[i] -= 2.0 * eps;
            let (lm, _) = disc_loss(&dp, 2).unwrap();
            assert!(((lp - lm) / (2.0 * eps) - grad[i]).abs() < 1e-5);
        }
    }

    /// Direct double-loop evaluation of the contrastive loss, no shared
    /// code with the implementation.
    fn supcon_oracle(z: &Array2<f64>, labels: &[usize], tau: f64, normalize: bool) -> f64 {
        let rows = z.nrows();
        let zn: Vec<Vec<f64>> = (0..rows)
            .map(|i| {
                let row: Vec<f64> = z.row(i).to_vec();
                if normalize {
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    row.iter().map(|v| v / n).collect()
                } else {
                    row
                }
            })
            .collect();
        let sim = |i: usize, j: usize| -> f64 {
            zn[i].iter().zip(&zn[j]).map(|(a, b)| a * b).sum::<f64>() / tau
        };
        let mut total = 0.0;
        for i in 0..rows {
            for p in 0..rows {
                if p == i || labels[p] != labels[i] {
                    continue;
                }
                let denom: f64 = (0..rows)
                    .filter(|&j| j != i)
                    .map(|j| sim(i, j).exp())
                    .sum();
                total += -1.0 / (rows as f64 - 1.0) * (sim(i, p).exp() / denom).ln();
            }
        }
        total
    }

    #[test]
    fn supcon_matches_oracle() {
        let z = array![
            [0.3, -1.2, 0.7],
            [0.1, 0.4, -0.9],
            [1.5, 0.2, 0.3],
            [-0.4, 0.8, 0.6],
            [0.9, -0.1, -0.2],
            [0.2, 0.5, 1.1]
        ];
        let labels = [0usize, 1, 0, 2, 1, 2];
        for normalize in [true, false] {
            let (loss, _) = supcon(&z, &labels, 0.25, normalize).unwrap();
            let oracle = supcon_oracle(&z, &labels, 0.25, normalize);
            assert!(
                (loss - oracle).abs() < 1e-10,
                "normalize={normalize}: {loss} vs {oracle}"
            );
        }
    }

    #[test]
    fn supcon_fd_check() {
        let z = array![
            [0.3, -1.2, 0.7],
            [0.1, 0.4, -0.9],
            [1.5, 0.2, 0.3],
            [-0.4, 0.8, 0.6]
        ];
        let labels = [0usize, 1, 0, 1];
        for normalize in [true, false] {
            let (_, grad) = supcon(&z, &labels, 0.3, normalize).unwrap();
            let eps = 1e-6;
            for i in 0..4 {
                for k in 0..3 {
                    let mut zp = z.clone();
                    zp[[i, k]] += eps;
                    let lp = supcon_oracle(&zp, &labels, 0.3, normalize);
                    zp[[i, k]] -= 2.0 * eps;
                    let lm = supcon_oracle(&zp, &labels, 0.3, normalize);
                    let fd = (lp - lm) / (2.0 * eps);
                    assert!(
                        (fd - grad[[i, k]]).abs() < 1e-5,
                        "normalize={normalize} ({i},{k}): fd {fd} vs {}",
                        grad[[i, k]]
                    );
                }
            }
        }
    }

    #[test]
    fn supcon_no_positive_anchor_contributes_zero() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let (loss_all_distinct, grad) = supcon(&z, &[0, 1, 2], 0.5, true).unwrap();
        assert_eq!(loss_all_distinct, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn supcon_permutation_invariant() {
        let z = array![
            [0.3, -1.2, 0.7],
            [0.1, 0.4, -0.9],
            [1.5, 0.2, 0.3],
            [-0.4, 0.8, 0.6]
        ];
        let labels = [0usize, 1, 0, 1];
        let (loss, _) = supcon(&z, &labels, 0.2, true).unwrap();
        // permute rows 0<->3
        let zp = array![
            [-0.4, 0.8, 0.6],
            [0.1, 0.4, -0.9],
            [1.5, 0.2, 0.3],
            [0.3, -1.2, 0.7]
        ];
        let lp = [1usize, 1, 0, 0];
        let (loss_p, _) = supcon(&zp, &lp, 0.2, true).unwrap();
        assert!((loss - loss_p).abs() < 1e-10);
    }

    #[test]
    fn composite_objectives_weighted_correctly() {
        let probs = array![[0.7, 0.3], [0.4, 0.6], [0.5, 0.5], [0.2, 0.8]];
        let g = array![
            [0.3, -1.2, 0.7],
            [0.1, 0.4, -0.9],
            [1.5, 0.2, 0.3],
            [-0.4, 0.8, 0.6]
        ];
        let d = array![0.8, 0.7, 0.4, 0.3];
        let labels = [0usize, 1];
        let w = LossWeights {
            lambda1: 2.0,
            lambda2: 0.5,
            lambda3: 1.5,
            lambda4: 3.0,
            tau: 0.4,
            supcon_normalize: true,
            l3_uses_lambda2: false,
        };
        let (bl, _) = batch_losses(&probs, &g, &d, &labels, &w).unwrap();
        assert!(
            (bl.l1 - (2.0 * bl.lc1 + 0.5 * bl.lc2 + 1.5 * bl.lsup - 3.0 * bl.ld)).abs() < 1e-12
        );
        assert_eq!(bl.l2, bl.ld);
        assert!((bl.l3 - (2.0 * bl.lc2 + 1.5 * bl.lsup + 3.0 * bl.ld)).abs() < 1e-12);
        let w2 = LossWeights {
            l3_uses_lambda2: true,
            ..w
        };
        let (bl2, _) = batch_losses(&probs, &g, &d, &labels, &w2).unwrap();
        assert!((bl2.l3 - (0.5 * bl2.lc2 + 1.5 * bl2.lsup + 3.0 * bl2.ld)).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_terms_are_named() {
        let bl = BatchLosses {
            lc1: 0.1,
            lc2: f64::NAN,
            lsup: 0.0,
            ld: 0.0,
            l1: 0.0,
            l2: 0.0,
            l3: 0.0,
        };
        assert_eq!(bl.finite(), Err("Lc2"));
    }
}
