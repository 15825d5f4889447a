//! Differentiable building blocks with explicit forward/backward passes.
//!
//! Activations are `f64` throughout; convolutions go through im2col + GEMM.
//! Backward passes return exact gradients of whatever the forward computed,
//! including clamp/floor kinks (gradient zero on the clamped side).

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

/// 1-D convolution, stride 1, same padding (odd kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// (out_channels, in_channels, kernel)
    pub w: Array3<f64>,
    pub b: Array1<f64>,
}

/// Cached im2col matrix for the backward pass.
pub struct ConvCache {
    cols: Array2<f64>,
    in_shape: (usize, usize, usize),
}

impl Conv1d {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Self {
            w: Array3::zeros((out_ch, in_ch, kernel)),
            b: Array1::zeros(out_ch),
        }
    }

    pub fn init(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(out_ch, in_ch, kernel);
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        layer.b.mapv_inplace(|_| rng.gen_range(-bound..bound));
        layer
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    /// x: (batch, in_ch, len) -> (batch, out_ch, len)
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (batch, in_ch, len) = x.dim();
        let out_ch = self.w.shape()[0];
        let k = self.kernel();
        let pad = k / 2;
        debug_assert_eq!(in_ch, self.w.shape()[1]);

        // cols[(ci * k + kk), (b * len + l)] = x[b, ci, l + kk - pad]
        let mut cols = Array2::zeros((in_ch * k, batch * len));
        for b in 0..batch {
            for ci in 0..in_ch {
                for kk in 0..k {
                    let row = ci * k + kk;
                    for l in 0..len {
                        let src = l + kk;
                        if src >= pad && src - pad < len {
                            cols[[row, b * len + l]] = x[[b, ci, src - pad]];
                        }
                    }
                }
            }
        }
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((out_ch, in_ch * k))
            .expect("contiguous kernel");
        let y_mat = w_mat.dot(&cols); // (out_ch, batch*len)
        let mut y = Array3::zeros((batch, out_ch, len));
        for b in 0..batch {
            for o in 0..out_ch {
                let bias = self.b[o];
                for l in 0..len {
                    y[[b, o, l]] = y_mat[[o, b * len + l]] + bias;
                }
            }
        }
        (
            y,
            ConvCache {
                cols,
                in_shape: (batch, in_ch, len),
            },
        )
    }

    /// Returns (grad_x, grad_w, grad_b). Set `need_grad_x` false at the first
    /// layer to skip the scatter.
    pub fn backward(
        &self,
        grad_y: &Array3<f64>,
        cache: &ConvCache,
        need_grad_x: bool,
    ) -> (Option<Array3<f64>>, Array3<f64>, Array1<f64>) {
        let (batch, in_ch, len) = cache.in_shape;
        let out_ch = self.w.shape()[0];
        let k = self.kernel();
        let pad = k / 2;

        let mut gy_mat = Array2::zeros((out_ch, batch * len));
        for b in 0..batch {
            for o in 0..out_ch {
                for l in 0..len {
                    gy_mat[[o, b * len + l]] = grad_y[[b, o, l]];
                }
            }
        }
        let grad_w_mat = gy_mat.dot(&cache.cols.t()); // (out_ch, in_ch*k)
        let grad_w = grad_w_mat
            .into_shape_with_order((out_ch, in_ch, k))
            .expect("contiguous");
        let grad_b = gy_mat.sum_axis(Axis(1));

        let grad_x = if need_grad_x {
            let w_mat = self
                .w
                .view()
                .into_shape_with_order((out_ch, in_ch * k))
                .expect("contiguous kernel");
            let grad_cols = w_mat.t().dot(&gy_mat); // (in_ch*k, batch*len)
            let mut gx = Array3::zeros((batch, in_ch, len));
            for b in 0..batch {
                for ci in 0..in_ch {
                    for kk in 0..k {
                        let row = ci * k + kk;
                        for l in 0..len {
                            let src = l + kk;
                            if src >= pad && src - pad < len {
                                gx[[b, ci, src - pad]] += grad_cols[[row, b * len + l]];
                            }
                        }
                    }
                }
            }
            Some(gx)
        } else {
            None
        };
        (grad_x, grad_w, grad_b)
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(out: usize, input: usize) -> Self {
        Self {
            w: Array2::zeros((out, input)),
            b: Array1::zeros(out),
        }
    }

    pub fn init(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(out, input);
        let bound = 1.0 / (input as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        layer.b.mapv_inplace(|_| rng.gen_range(-bound..bound));
        layer
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// x: (batch, in) -> (batch, out)
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Returns (grad_x, grad_w, grad_b).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_y: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let grad_w = grad_y.t().dot(x);
        let grad_b = grad_y.sum_axis(Axis(0));
        let grad_x = grad_y.dot(&self.w);
        (grad_x, grad_w, grad_b)
    }
}

/// Max pooling, size 2, stride 2, over the last axis.
pub fn max_pool2(x: &Array3<f64>) -> (Array3<f64>, Array3<u8>) {
    let (batch, ch, len) = x.dim();
    assert!(len % 2 == 0, "pooling needs an even length, got {len}");
    let half = len / 2;
    let mut y = Array3::zeros((batch, ch, half));
    let mut arg = Array3::zeros((batch, ch, half));
    for b in 0..batch {
        for c in 0..ch {
            for l in 0..half {
                let (a, z) = (x[[b, c, 2 * l]], x[[b, c, 2 * l + 1]]);
                if z > a {
                    y[[b, c, l]] = z;
                    arg[[b, c, l]] = 1;
                } else {
                    y[[b, c, l]] = a;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward(grad_y: &Array3<f64>, arg: &Array3<u8>, in_len: usize) -> Array3<f64> {
    let (batch, ch, half) = grad_y.dim();
    let mut gx = Array3::zeros((batch, ch, in_len));
    for b in 0..batch {
        for c in 0..ch {
            for l in 0..half {
                gx[[b, c, 2 * l + arg[[b, c, l]] as usize]] = grad_y[[b, c, l]];
            }
        }
    }
    gx
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Backward uses the forward output: gradient passes where the output is
/// strictly positive.
pub fn relu_backward<D: ndarray::Dimension>(
    grad_y: &ndarray::Array<f64, D>,
    y: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = grad_y.clone();
    ndarray::Zip::from(&mut g).and(y).for_each(|gi, &yi| {
        if yi <= 0.0 {
            *gi = 0.0;
        }
    });
    g
}

/// Row-wise softmax with the usual max-shift.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Given dL/dprobs, return dL/dlogits.
pub fn softmax_backward(grad_probs: &Array2<f64>, probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(grad_probs.raw_dim());
    for i in 0..probs.nrows() {
        let p = probs.row(i);
        let g = grad_probs.row(i);
        let dot: f64 = p.iter().zip(g.iter()).map(|(pi, gi)| pi * gi).sum();
        for j in 0..p.len() {
            out[[i, j]] = p[j] * (g[j] - dot);
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverted dropout mask: entries are 0 with probability `p`, else 1/(1-p).
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut impl Rng) -> Array2<f64> {
    assert!((0.0..1.0).contains(&p));
    let keep = 1.0 - p;
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < p {
            0.0
        } else {
            1.0 / keep
        }
    })
}
