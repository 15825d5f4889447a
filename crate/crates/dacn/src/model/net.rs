//! The five networks and their exact gradient plumbing.
//!
//! Forward, for a batch of seen-mode windows `x`:
//!
//! - feature extractor: conv -> pool -> relu -> conv -> pool -> relu ->
//!   conv -> relu, giving `f` of shape (batch, channels, k/4);
//! - feature transformer: `f' = h1(n1) * (f - mu)/sigma + h2(n2)` with
//!   per-sample, per-channel instance statistics over time;
//! - domain-invariant extractor on the concatenated [f; f'] flattened batch:
//!   linear -> relu -> dropout, giving `g`;
//! - classifier: linear -> softmax, giving class probabilities `c`;
//! - discriminator: sigmoid(linear(flatten(g (x) c))), giving the seen-mode
//!   probability `d`.
//!
//! The backward pass is parameterized by which module groups accumulate
//! gradients, so the trainer can route the three objectives to
//! {extractor, invariant extractor, classifier}, {discriminator}, and
//! {transformer} respectively while the chain rule still flows through
//! every fixed module in between.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{DacnError, Result};

use super::layers::{
    dropout_mask, max_pool2, max_pool2_backward, relu, relu_backward, sigmoid, softmax,
    softmax_backward, Conv1d, ConvCache, Linear,
};

pub const SIGMA_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Measured variables per sample.
    pub v: usize,
    /// Window length; must be divisible by 4 (two halving pools).
    pub k: usize,
    /// Convolution width (feature channels).
    pub channels: usize,
    /// Convolution kernel size (odd).
    pub kernel: usize,
    /// Domain-invariant feature dimension.
    pub g_dim: usize,
    /// Health classes.
    pub n_classes: usize,
    /// Noise vector width feeding h1/h2 (one scale and shift per channel).
    pub noise_dim: usize,
    pub dropout: f64,
    /// Constrain the transformer scale to be positive via softplus.
    pub h1_softplus: bool,
}

impl ModelConfig {
    pub fn cstr_default(n_classes: usize) -> Self {
        Self {
            v: 7,
            k: 64,
            channels: 128,
            kernel: 3,
            g_dim: 256,
            n_classes,
            noise_dim: 128,
            dropout: 0.3,
            h1_softplus: false,
        }
    }

    /// A few-hundred-parameter variant for gradient checks.
    pub fn tiny(v: usize, k: usize, n_classes: usize) -> Self {
        Self {
            v,
            k,
            channels: 4,
            kernel: 3,
            g_dim: 8,
            n_classes,
            noise_dim: 4,
            dropout: 0.0,
            h1_softplus: false,
        }
    }

    pub fn from_config(cfg: &Config, n_classes: usize) -> Result<Self> {
        let d = Self::cstr_default(n_classes);
        let out = Self {
            v: cfg.usize_or("model.v", d.v)?,
            k: cfg.usize_or("model.k", d.k)?,
            channels: cfg.usize_or("model.channels", d.channels)?,
            kernel: cfg.usize_or("model.kernel", d.kernel)?,
            g_dim: cfg.usize_or("model.g_dim", d.g_dim)?,
            n_classes,
            noise_dim: cfg.usize_or("model.noise_dim", d.noise_dim)?,
            dropout: cfg.f64_or("model.dropout", d.dropout)?,
            h1_softplus: cfg.bool_or("model.h1_softplus", d.h1_softplus)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k % 4 != 0 || self.k == 0 {
            return Err(DacnError::InvalidArgument(format!(
                "window length {} must be a positive multiple of 4",
                self.k
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(DacnError::InvalidArgument("kernel must be odd".into()));
        }
        if self.noise_dim != self.channels {
            return Err(DacnError::InvalidArgument(format!(
                "noise_dim {} must equal channels {} (one scale/shift per channel)",
                self.noise_dim, self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DacnError::InvalidArgument("dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Feature length after the two pools.
    pub fn feat_len(&self) -> usize {
        self.k / 4
    }

    /// Flattened feature dimension entering the invariant extractor.
    pub fn flat_dim(&self) -> usize {
        self.channels * self.feat_len()
    }

    /// Discriminator input dimension.
    pub fn disc_dim(&self) -> usize {
        self.g_dim * self.n_classes
    }
}

/// Weights of all five networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub conv3: Conv1d,
    pub h1: Linear,
    pub h2: Linear,
    pub g: Linear,
    pub c: Linear,
    pub d: Linear,
}

/// Module groups, matching the per-objective update routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleGroup {
    Extractor,
    Transformer,
    Invariant,
    Classifier,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Training,
    Inference,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        // h1/h2 start as the identity so the transformer's initial output
        // is exactly `n1 * (f - mu)/sigma + n2`: a plausible magnitude
        // rescale and shift of a real feature. A small random init would
        // instead emit near-zero pseudo features whose confident labels
        // derail the classifier before the transformer has learned anything.
        let mut h1 = Linear::zeros(cfg.channels, cfg.noise_dim);
        let mut h2 = Linear::zeros(cfg.channels, cfg.noise_dim);
        for i in 0..cfg.channels {
            h1.w[[i, i]] = 1.0;
            h2.w[[i, i]] = 1.0;
        }
        Ok(Self {
            cfg: cfg.clone(),
            conv1: Conv1d::init(cfg.channels, cfg.v, cfg.kernel, rng),
            conv2: Conv1d::init(cfg.channels, cfg.channels, cfg.kernel, rng),
            conv3: Conv1d::init(cfg.channels, cfg.channels, cfg.kernel, rng),
            h1,
            h2,
            g: Linear::init(cfg.g_dim, cfg.flat_dim(), rng),
            c: Linear::init(cfg.n_classes, cfg.g_dim, rng),
            d: Linear::init(1, cfg.disc_dim(), rng),
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            conv1: Conv1d::zeros(cfg.channels, cfg.v, cfg.kernel),
            conv2: Conv1d::zeros(cfg.channels, cfg.channels, cfg.kernel),
            conv3: Conv1d::zeros(cfg.channels, cfg.channels, cfg.kernel),
            h1: Linear::zeros(cfg.channels, cfg.noise_dim),
            h2: Linear::zeros(cfg.channels, cfg.noise_dim),
            g: Linear::zeros(cfg.g_dim, cfg.flat_dim()),
            c: Linear::zeros(cfg.n_classes, cfg.g_dim),
            d: Linear::zeros(1, cfg.disc_dim()),
        })
    }

    pub fn group_params(&self, group: ModuleGroup) -> usize {
        match group {
            ModuleGroup::Extractor => {
                self.conv1.n_params() + self.conv2.n_params() + self.conv3.n_params()
            }
            ModuleGroup::Transformer => self.h1.n_params() + self.h2.n_params(),
            ModuleGroup::Invariant => self.g.n_params(),
            ModuleGroup::Classifier => self.c.n_params(),
            ModuleGroup::Discriminator => self.d.n_params(),
        }
    }

    /// Parameter count per stage: training uses all five networks,
    /// inference only the extractor, invariant extractor, and classifier.
    pub fn count_params(&self, stage: Stage) -> usize {
        let infer = self.group_params(ModuleGroup::Extractor)
            + self.group_params(ModuleGroup::Invariant)
            + self.group_params(ModuleGroup::Classifier);
        match stage {
            Stage::Inference => infer,
            Stage::Training => {
                infer
                    + self.group_params(ModuleGroup::Transformer)
                    + self.group_params(ModuleGroup::Discriminator)
            }
        }
    }

    /// Visit every parameter tensor as a flat slice, in a fixed order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(ModuleGroup, &mut [f64])) {
        use ModuleGroup::*;
        f(Extractor, self.conv1.w.as_slice_mut().unwrap());
        f(Extractor, self.conv1.b.as_slice_mut().unwrap());
        f(Extractor, self.conv2.w.as_slice_mut().unwrap());
        f(Extractor, self.conv2.b.as_slice_mut().unwrap());
        f(Extractor, self.conv3.w.as_slice_mut().unwrap());
        f(Extractor, self.conv3.b.as_slice_mut().unwrap());
        f(Transformer, self.h1.w.as_slice_mut().unwrap());
        f(Transformer, self.h1.b.as_slice_mut().unwrap());
        f(Transformer, self.h2.w.as_slice_mut().unwrap());
        f(Transformer, self.h2.b.as_slice_mut().unwrap());
        f(Invariant, self.g.w.as_slice_mut().unwrap());
        f(Invariant, self.g.b.as_slice_mut().unwrap());
        f(Classifier, self.c.w.as_slice_mut().unwrap());
        f(Classifier, self.c.b.as_slice_mut().unwrap());
        f(Discriminator, self.d.w.as_slice_mut().unwrap());
        f(Discriminator, self.d.b.as_slice_mut().unwrap());
    }

    pub fn visit(&self, mut f: impl FnMut(ModuleGroup, &[f64])) {
        use ModuleGroup::*;
        f(Extractor, self.conv1.w.as_slice().unwrap());
        f(Extractor, self.conv1.b.as_slice().unwrap());
        f(Extractor, self.conv2.w.as_slice().unwrap());
        f(Extractor, self.conv2.b.as_slice().unwrap());
        f(Extractor, self.conv3.w.as_slice().unwrap());
        f(Extractor, self.conv3.b.as_slice().unwrap());
        f(Transformer, self.h1.w.as_slice().unwrap());
        f(Transformer, self.h1.b.as_slice().unwrap());
        f(Transformer, self.h2.w.as_slice().unwrap());
        f(Transformer, self.h2.b.as_slice().unwrap());
        f(Invariant, self.g.w.as_slice().unwrap());
        f(Invariant, self.g.b.as_slice().unwrap());
        f(Classifier, self.c.w.as_slice().unwrap());
        f(Classifier, self.c.b.as_slice().unwrap());
        f(Discriminator, self.d.w.as_slice().unwrap());
        f(Discriminator, self.d.b.as_slice().unwrap());
    }
}

/// Gradients with the same shapes as [`ModelParams`].
pub type Grads = ModelParams;

/// Per-sample noise feeding the feature transformer: `n1 ~ U(0.05, 1.95)`
/// drives magnitude scaling, `n2 ~ N(0, 1)` drives steady-state shift.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub n1: Array2<f64>,
    pub n2: Array2<f64>,
}

impl NoiseDraw {
    pub fn sample(batch: usize, noise_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let n1 = Array2::from_shape_simple_fn((batch, noise_dim), || rng.gen_range(0.05..1.95));
        let n2 = Array2::from_shape_simple_fn((batch, noise_dim), || normal.sample(rng));
        Self { n1, n2 }
    }
}

/// Everything the extractor computes for one batch, cached for backward.
pub struct ExtractCache {
    pub x: Array3<f64>,
    z1_cache: ConvCache,
    arg1: Array3<u8>,
    a1: Array3<f64>,
    z2_cache: ConvCache,
    arg2: Array3<u8>,
    a2: Array3<f64>,
    z3_cache: ConvCache,
    /// relu(conv3) = the feature map `f`.
    pub f: Array3<f64>,
}

/// Transformer cache: instance statistics and the normalized features.
pub struct TransformCache {
    pub noise: NoiseDraw,
    /// raw h1 output before the optional softplus
    scale_pre: Array2<f64>,
    /// effective per-channel scale
    pub scale: Array2<f64>,
    pub shift: Array2<f64>,
    /// (batch, channels) instance std after flooring
    sigma: Array2<f64>,
    /// whether the floor clipped this (sample, channel)
    floored: Array2<bool>,
    /// (f - mu)/sigma
    xhat: Array3<f64>,
    pub fprime: Array3<f64>,
}

/// Head cache over the concatenated [seen; pseudo] batch.
pub struct HeadCache {
    /// (rows, flat_dim) input to G
    flat: Array2<f64>,
    g_relu: Array2<f64>,
    drop_mask: Option<Array2<f64>>,
    /// after dropout; what the classifier, discriminator, and contrastive
    /// loss all consume
    pub g: Array2<f64>,
    pub probs: Array2<f64>,
    d_in: Array2<f64>,
    pub d: Array1<f64>,
}

/// Map the sample space to the feature space: three convolutions with two
/// halving max-pools; activations after each pool and the last convolution.
pub fn extract(params: &ModelParams, x: &Array3<f64>) -> Result<ExtractCache> {
    let (_, v, k) = x.dim();
    if v != params.cfg.v || k != params.cfg.k {
        return Err(DacnError::Shape(format!(
            "expected input ({}, {}), got ({v}, {k})",
            params.cfg.v, params.cfg.k
        )));
    }
    let (z1, z1_cache) = params.conv1.forward(x);
    let (p1, arg1) = max_pool2(&z1);
    let a1 = relu(&p1);
    let (z2, z2_cache) = params.conv2.forward(&a1);
    let (p2, arg2) = max_pool2(&z2);
    let a2 = relu(&p2);
    let (z3, z3_cache) = params.conv3.forward(&a2);
    let f = relu(&z3);
    Ok(ExtractCache {
        x: x.clone(),
        z1_cache,
        arg1,
        a1,
        z2_cache,
        arg2,
        a2,
        z3_cache,
        f,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Instance statistics of `f`: per-sample, per-channel mean and std over the
/// time axis, with the std floored at [`SIGMA_FLOOR`].
pub fn instance_stats(f: &Array3<f64>) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
    let (batch, ch, t) = f.dim();
    let mut mu = Array2::zeros((batch, ch));
    let mut sigma = Array2::zeros((batch, ch));
    let mut floored = Array2::from_elem((batch, ch), false);
    for b in 0..batch {
        for c in 0..ch {
            let lane = f.slice(s![b, c, ..]);
            let m = lane.sum() / t as f64;
            let var = lane.iter().map(|x| (x - m).powi(2)).sum::<f64>() / t as f64;
            let s = var.sqrt();
            mu[[b, c]] = m;
            if s < SIGMA_FLOOR {
                sigma[[b, c]] = SIGMA_FLOOR;
                floored[[b, c]] = true;
            } else {
                sigma[[b, c]] = s;
            }
        }
    }
    (mu, sigma, floored)
}

/// Generate pseudo-sample features: per-channel scale and shift of the
/// instance-normalized features, with the scale/shift produced from noise.
pub fn transform(params: &ModelParams, f: &Array3<f64>, noise: NoiseDraw) -> TransformCache {
    let (batch, ch, t) = f.dim();
    let (mu, sigma, floored) = instance_stats(f);
    let scale_pre = params.h1.forward(&noise.n1);
    let scale = if params.cfg.h1_softplus {
        scale_pre.mapv(softplus)
    } else {
        scale_pre.clone()
    };
    let shift = params.h2.forward(&noise.n2);
    let mut xhat = Array3::zeros((batch, ch, t));
    let mut fprime = Array3::zeros((batch, ch, t));
    for b in 0..batch {
        for c in 0..ch {
            let (m, s) = (mu[[b, c]], sigma[[b, c]]);
            for j in 0..t {
                let xh = (f[[b, c, j]] - m) / s;
                xhat[[b, c, j]] = xh;
                fprime[[b, c, j]] = scale[[b, c]] * xh + shift[[b, c]];
            }
        }
    }
    TransformCache {
        noise,
        scale_pre,
        scale,
        shift,
        sigma,
        floored,
        xhat,
        fprime,
    }
}

fn flatten(f: &Array3<f64>) -> Array2<f64> {
    let (batch, ch, t) = f.dim();
    f.to_owned()
        .into_shape_with_order((batch, ch * t))
        .expect("contiguous features")
}

fn unflatten(m: Array2<f64>, ch: usize, t: usize) -> Array3<f64> {
    let batch = m.nrows();
    m.into_shape_with_order((batch, ch, t)).expect("contiguous")
}

/// Flattened outer product u[row] = g[row] (x) c[row], g-index major.
fn multilinear(g: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let (rows, gd) = g.dim();
    let l = c.ncols();
    let mut u = Array2::zeros((rows, gd * l));
    for r in 0..rows {
        for m in 0..gd {
            let gm = g[[r, m]];
            for j in 0..l {
                u[[r, m * l + j]] = gm * c[[r, j]];
            }
        }
    }
    u
}

/// Run the heads (G, C, D) over a stack of feature rows. `drop_mask` is
/// `None` in eval mode.
pub fn heads(
    params: &ModelParams,
    flat: Array2<f64>,
    drop_mask: Option<Array2<f64>>,
) -> Result<HeadCache> {
    if flat.ncols() != params.cfg.flat_dim() {
        return Err(DacnError::Shape(format!(
            "flattened features have dim {}, expected {}",
            flat.ncols(),
            params.cfg.flat_dim()
        )));
    }
    let g_pre = params.g.forward(&flat);
    let g_relu = relu(&g_pre);
    let g = match &drop_mask {
        Some(m) => &g_relu * m,
        None => g_relu.clone(),
    };
    let logits = params.c.forward(&g);
    let probs = softmax(&logits);
    let d_in = multilinear(&g, &probs);
    let d_logit = params.d.forward(&d_in);
    let d = d_logit.column(0).mapv(sigmoid);
    Ok(HeadCache {
        flat,
        g_relu,
        drop_mask,
        g,
        probs,
        d_in,
        d,
    })
}

/// Full training-mode forward: seen branch, pseudo branch, heads over the
/// concatenated batch (seen rows first).
pub struct TrainForward {
    pub extract: ExtractCache,
    pub transform: TransformCache,
    pub heads: HeadCache,
    pub batch: usize,
}

pub fn forward_train(
    params: &ModelParams,
    x: &Array3<f64>,
    rng: &mut impl Rng,
) -> Result<TrainForward> {
    let batch = x.dim().0;
    let ext = extract(params, x)?;
    let noise = NoiseDraw::sample(batch, params.cfg.noise_dim, rng);
    let tr = transform(params, &ext.f, noise);
    let flat = ndarray::concatenate(
        Axis(0),
        &[flatten(&ext.f).view(), flatten(&tr.fprime).view()],
    )
    .expect("matching dims");
    let drop_mask = if params.cfg.dropout > 0.0 {
        Some(dropout_mask((2 * batch, params.cfg.g_dim), params.cfg.dropout, rng))
    } else {
        None
    };
    let heads = heads(params, flat, drop_mask)?;
    Ok(TrainForward {
        extract: ext,
        transform: tr,
        heads,
        batch,
    })
}

/// Deterministic inference: extractor + invariant extractor + classifier,
/// no dropout, no noise, no discriminator.
pub fn forward_eval(params: &ModelParams, x: &Array3<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let ext = extract(params, x)?;
    let h = heads(params, flatten(&ext.f), None)?;
    Ok((h.g, h.probs))
}

/// Which gradients a backward pass accumulates, and how deep it descends.
#[derive(Debug, Clone, Copy)]
pub struct BackwardPlan {
    pub accum_extractor: bool,
    pub accum_transformer: bool,
    pub accum_invariant: bool,
    pub accum_classifier: bool,
    pub accum_discriminator: bool,
    /// Propagate into the convolution stack (needed only when the extractor
    /// accumulates).
    pub into_conv: bool,
}

impl BackwardPlan {
    /// Objective 1: update extractor, invariant extractor, classifier.
    pub fn feature_path() -> Self {
        Self {
            accum_extractor: true,
            accum_transformer: false,
            accum_invariant: true,
            accum_classifier: true,
            accum_discriminator: false,
            into_conv: true,
        }
    }

    /// Objective 2: update the discriminator alone.
    pub fn discriminator_only() -> Self {
        Self {
            accum_extractor: false,
            accum_transformer: false,
            accum_invariant: false,
            accum_classifier: false,
            accum_discriminator: true,
            into_conv: false,
        }
    }

    /// Objective 3: update the feature transformer alone.
    pub fn transformer_only() -> Self {
        Self {
            accum_extractor: false,
            accum_transformer: true,
            accum_invariant: false,
            accum_classifier: false,
            accum_discriminator: false,
            into_conv: false,
        }
    }
}

/// Upstream gradients of a scalar objective with respect to the head
/// outputs. Rows follow the forward layout: seen first, pseudo second.
pub struct HeadGrads {
    /// dL/dprobs, (2B, L); zero rows where the objective ignores them.
    pub dprobs: Array2<f64>,
    /// dL/dg from the contrastive term, (2B, g_dim).
    pub dg: Array2<f64>,
    /// dL/dd, (2B,).
    pub dd: Array1<f64>,
}

/// Backward through the whole graph. Returns gradients for exactly the
/// groups the plan accumulates; all other tensors stay zero.
pub fn backward(
    params: &ModelParams,
    fwd: &TrainForward,
    upstream: &HeadGrads,
    plan: &BackwardPlan,
) -> Result<Grads> {
    let cfg = &params.cfg;
    let batch = fwd.batch;
    let rows = 2 * batch;
    let mut grads = ModelParams::zeros(cfg)?;

    // --- discriminator: d = sigmoid(W u + b)
    let h = &fwd.heads;
    let mut d_logit_grad = Array2::zeros((rows, 1));
    for r in 0..rows {
        let dr = h.d[r];
        d_logit_grad[[r, 0]] = upstream.dd[r] * dr * (1.0 - dr);
    }
    let (du, d_gw, d_gb) = params.d.backward(&h.d_in, &d_logit_grad);
    if plan.accum_discriminator {
        grads.d.w = d_gw;
        grads.d.b = d_gb;
        // nothing deeper is requested by the discriminator objective
        if !plan.accum_extractor
            && !plan.accum_transformer
            && !plan.accum_invariant
            && !plan.accum_classifier
        {
            return Ok(grads);
        }
    }

    // --- multilinear conditioning: u = g (x) probs
    let gd = cfg.g_dim;
    let l = cfg.n_classes;
    let mut dg = upstream.dg.clone();
    let mut dprobs = upstream.dprobs.clone();
    for r in 0..rows {
        for m in 0..gd {
            let mut acc = 0.0;
            for j in 0..l {
                let duv = du[[r, m * l + j]];
                acc += duv * h.probs[[r, j]];
                dprobs[[r, j]] += duv * h.g[[r, m]];
            }
            dg[[r, m]] += acc;
        }
    }

    // --- classifier: probs = softmax(C g)
    let dlogits = softmax_backward(&dprobs, &h.probs);
    let (dg_from_c, c_gw, c_gb) = params.c.backward(&h.g, &dlogits);
    if plan.accum_classifier {
        grads.c.w = c_gw;
        grads.c.b = c_gb;
    }
    dg += &dg_from_c;

    // --- invariant extractor: g = dropout(relu(G flat))
    if let Some(mask) = &h.drop_mask {
        dg *= mask;
    }
    let dg_relu = relu_backward(&dg, &h.g_relu);
    let (dflat, g_gw, g_gb) = params.g.backward(&h.flat, &dg_relu);
    if plan.accum_invariant {
        grads.g.w = g_gw;
        grads.g.b = g_gb;
    }

    let feat_len = cfg.feat_len();
    let dflat_seen = dflat.slice(s![..batch, ..]).to_owned();
    let dflat_pseudo = dflat.slice(s![batch.., ..]).to_owned();
    let dfprime = unflatten(dflat_pseudo, cfg.channels, feat_len);

    // --- feature transformer: f' = scale * xhat + shift
    let tr = &fwd.transform;
    let mut dscale = Array2::zeros((batch, cfg.channels));
    let mut dshift = Array2::zeros((batch, cfg.channels));
    let mut dxhat = Array3::zeros(dfprime.raw_dim());
    for b in 0..batch {
        for c in 0..cfg.channels {
            let mut sacc = 0.0;
            let mut hacc = 0.0;
            for j in 0..feat_len {
                let gpr = dfprime[[b, c, j]];
                sacc += gpr * tr.xhat[[b, c, j]];
                hacc += gpr;
                dxhat[[b, c, j]] = gpr * tr.scale[[b, c]];
            }
            dscale[[b, c]] = sacc;
            dshift[[b, c]] = hacc;
        }
    }
    if plan.accum_transformer {
        let dscale_pre = if cfg.h1_softplus {
            // d softplus = sigmoid
            let mut d = dscale.clone();
            for (dv, &pre) in d.iter_mut().zip(tr.scale_pre.iter()) {
                *dv *= sigmoid(pre);
            }
            d
        } else {
            dscale.clone()
        };
        let (_, h1_gw, h1_gb) = params.h1.backward(&tr.noise.n1, &dscale_pre);
        let (_, h2_gw, h2_gb) = params.h2.backward(&tr.noise.n2, &dshift);
        grads.h1.w = h1_gw;
        grads.h1.b = h1_gb;
        grads.h2.w = h2_gw;
        grads.h2.b = h2_gb;
    }

    if !plan.into_conv {
        return Ok(grads);
    }

    // --- instance norm backward: xhat depends on f through mu and sigma
    let ext = &fwd.extract;
    let mut df = unflatten(dflat_seen, cfg.channels, feat_len);
    let t_len = feat_len as f64;
    for b in 0..batch {
        for c in 0..cfg.channels {
            let sigma = tr.sigma[[b, c]];
            let mean_dx: f64 =
                (0..feat_len).map(|j| dxhat[[b, c, j]]).sum::<f64>() / t_len;
            if tr.floored[[b, c]] {
                // sigma clamped: only the mean path contributes
                for j in 0..feat_len {
                    df[[b, c, j]] += (dxhat[[b, c, j]] - mean_dx) / sigma;
                }
            } else {
                let mean_dx_xhat: f64 = (0..feat_len)
                    .map(|j| dxhat[[b, c, j]] * tr.xhat[[b, c, j]])
                    .sum::<f64>()
                    / t_len;
                for j in 0..feat_len {
                    df[[b, c, j]] += (dxhat[[b, c, j]]
                        - mean_dx
                        - tr.xhat[[b, c, j]] * mean_dx_xhat)
                        / sigma;
                }
            }
        }
    }

    // --- convolution stack
    let dz3 = relu_backward(&df, &ext.f);
    let (da2, c3_gw, c3_gb) = params.conv3.backward(&dz3, &ext.z3_cache, true);
    let da2 = da2.expect("requested grad");
    let dp2 = relu_backward(&da2, &ext.a2);
    let dz2 = max_pool2_backward(&dp2, &ext.arg2, cfg.k / 2);
    let (da1, c2_gw, c2_gb) = params.conv2.backward(&dz2, &ext.z2_cache, true);
    let da1 = da1.expect("requested grad");
    let dp1 = relu_backward(&da1, &ext.a1);
    let dz1 = max_pool2_backward(&dp1, &ext.arg1, cfg.k);
    let (_, c1_gw, c1_gb) = params.conv1.backward(&dz1, &ext.z1_cache, false);
    if plan.accum_extractor {
        grads.conv1.w = c1_gw;
        grads.conv1.b = c1_gb;
        grads.conv2.w = c2_gw;
        grads.conv2.b = c2_gb;
        grads.conv3.w = c3_gw;
        grads.conv3.b = c3_gb;
    }
    Ok(grads)
}
