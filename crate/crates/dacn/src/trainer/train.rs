//! Two-stage training.
//!
//! Stage 1 pretrains the extractor, invariant extractor, and classifier on
//! the seen-mode cross-entropy alone. Stage 2 runs the adversarial loop:
//! one forward per batch, then three backward passes routed to disjoint
//! module groups — the feature path minimizes `L1`, the discriminator
//! minimizes `L2`, and the transformer minimizes `L3`. All three updates
//! are computed from the same forward state and applied together.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataio::SampleSet;
use crate::error::{DacnError, Result};
use crate::losses::{batch_losses, BatchLosses, LossWeights};
use crate::model::{
    backward, forward_eval, forward_train, BackwardPlan, ModelConfig, ModelParams, ModuleGroup,
};

use super::adam::{Adam, AdamConfig};

/// Which pieces of the method a run uses. The lettered variants knock out
/// one ingredient each, for controlled comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// The full method.
    Full,
    /// Pre-training only: the adversarial stage is skipped entirely.
    A1,
    /// No supervised contrastive term (`lambda3 = 0`).
    A2,
    /// No adversarial game (`lambda4 = 0`, discriminator frozen).
    A3,
    /// No pre-training: the adversarial stage starts from random weights.
    A4,
}

impl std::str::FromStr for Ablation {
    type Err = DacnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "a1" => Ok(Self::A1),
            "a2" => Ok(Self::A2),
            "a3" => Ok(Self::A3),
            "a4" => Ok(Self::A4),
            other => Err(DacnError::InvalidArgument(format!(
                "unknown ablation {other:?} (expected full/a1/a2/a3/a4)"
            ))),
        }
    }
}

impl Ablation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::A1 => "a1",
            Self::A2 => "a2",
            Self::A3 => "a3",
            Self::A4 => "a4",
        }
    }

    /// Apply the knockout to the loss weights.
    pub fn adjust(&self, w: &LossWeights) -> LossWeights {
        let mut w = *w;
        match self {
            Self::Full | Self::A1 | Self::A4 => {}
            Self::A2 => w.lambda3 = 0.0,
            Self::A3 => w.lambda4 = 0.0,
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_train: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate for the adversarial stage; `None` reuses `lr`. The
    /// default is lower than the pre-training rate: stage 2 fine-tunes an
    /// already-good feature path, and a full-rate adversarial stage
    /// occasionally drifts away from mode invariance on unlucky seeds.
    pub lr_adversarial: Option<f64>,
    /// Learning-rate multiplier for the discriminator only. The feature path
    /// maximizes the unnormalized discriminative sum, so a faster
    /// discriminator clock keeps the adversarial game from collapsing.
    pub disc_lr_mult: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pretrain: 10,
            epochs_train: 20,
            batch_size: 128,
            lr: 1e-3,
            lr_adversarial: Some(3e-4),
            disc_lr_mult: 1.0,
            weights: LossWeights::default(),
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            epochs_pretrain: cfg.usize_or("train.epochs_pretrain", d.epochs_pretrain)?,
            epochs_train: cfg.usize_or("train.epochs_train", d.epochs_train)?,
            batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
            lr: cfg.f64_or("train.lr", d.lr)?,
            lr_adversarial: match cfg.get("train.lr_adversarial") {
                Some(_) => Some(cfg.get_f64("train.lr_adversarial")?),
                None => d.lr_adversarial,
            },
            disc_lr_mult: cfg.f64_or("train.disc_lr_mult", d.disc_lr_mult)?,
            weights: LossWeights::from_config(cfg)?,
            seed: cfg.u64_or("train.seed", d.seed)?,
            ablation: cfg.str_or("train.ablation", "full").parse()?,
        };
        if out.batch_size < 2 {
            return Err(DacnError::InvalidArgument(
                "batch_size must be at least 2".into(),
            ));
        }
        Ok(out)
    }
}

/// One epoch's averaged terms, for run logs and HPO scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub lc1: f64,
    pub lc2: f64,
    pub lsup: f64,
    pub ld: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Classifier accuracy on the generated pseudo rows.
    pub pseudo_acc: f64,
    pub wall_s: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

fn gather(set: &SampleSet, idx: &[usize]) -> (Array3<f64>, Vec<usize>) {
    let (_, v, k) = set.x.dim();
    let mut x = Array3::zeros((idx.len(), v, k));
    let mut labels = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        x.index_axis_mut(Axis(0), row)
            .assign(&set.x.index_axis(Axis(0), i));
        labels.push(set.labels[i]);
    }
    (x, labels)
}

fn check_finite(bl: &BatchLosses, stage: &str, epoch: usize) -> Result<()> {
    if let Err(term) = bl.finite() {
        return Err(DacnError::NanLoss {
            stage: stage.to_string(),
            term: term.to_string(),
            epoch,
        });
    }
    Ok(())
}

struct EpochAccum {
    sums: [f64; 7],
    pseudo_correct: usize,
    pseudo_total: usize,
    batches: usize,
}

impl EpochAccum {
    fn new() -> Self {
        Self {
            sums: [0.0; 7],
            pseudo_correct: 0,
            pseudo_total: 0,
            batches: 0,
        }
    }

    fn add(&mut self, bl: &BatchLosses) {
        for (s, v) in self
            .sums
            .iter_mut()
            .zip([bl.lc1, bl.lc2, bl.lsup, bl.ld, bl.l1, bl.l2, bl.l3])
        {
            *s += v;
        }
        self.batches += 1;
    }

    fn record(&self, stage: &str, epoch: usize, wall_s: f64) -> EpochRecord {
        let n = self.batches.max(1) as f64;
        EpochRecord {
            stage: stage.to_string(),
            epoch,
            lc1: self.sums[0] / n,
            lc2: self.sums[1] / n,
            lsup: self.sums[2] / n,
            ld: self.sums[3] / n,
            l1: self.sums[4] / n,
            l2: self.sums[5] / n,
            l3: self.sums[6] / n,
            pseudo_acc: if self.pseudo_total == 0 {
                f64::NAN
            } else {
                self.pseudo_correct as f64 / self.pseudo_total as f64
            },
            wall_s,
        }
    }
}

/// Stage 1: cross-entropy pretraining of the feature path.
pub fn pretrain(
    params: &mut ModelParams,
    train_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    run_stage(params, train_set, cfg, Stage1Or2::Pretrain)
}

/// Stage 2: the adversarial loop (or its ablated variant). Under the
/// pretrain-only ablation this is a no-op.
pub fn adversarial_train(
    params: &mut ModelParams,
    train_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if cfg.ablation == Ablation::A1 {
        return Ok(Vec::new());
    }
    run_stage(params, train_set, cfg, Stage1Or2::Adversarial)
}

#[derive(Clone, Copy, PartialEq)]
enum Stage1Or2 {
    Pretrain,
    Adversarial,
}

fn run_stage(
    params: &mut ModelParams,
    train_set: &SampleSet,
    cfg: &TrainConfig,
    stage: Stage1Or2,
) -> Result<Vec<EpochRecord>> {
    let (stage_name, epochs) = match stage {
        Stage1Or2::Pretrain => ("pretrain", cfg.epochs_pretrain),
        Stage1Or2::Adversarial => ("train", cfg.epochs_train),
    };
    let n = train_set.x.dim().0;
    if n < 2 {
        return Err(DacnError::MissingData(format!(
            "need at least 2 training samples, got {n}"
        )));
    }
    let w = cfg.ablation.adjust(&cfg.weights);
    let source_only = stage == Stage1Or2::Pretrain;
    let lr = match stage {
        Stage1Or2::Pretrain => cfg.lr,
        Stage1Or2::Adversarial => cfg.lr_adversarial.unwrap_or(cfg.lr),
    };
    let mut adam = Adam::new(
        &params.cfg,
        AdamConfig {
            lr,
            disc_lr_mult: cfg.disc_lr_mult,
            ..AdamConfig::default()
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(epochs);
    // Both stages derive their streams identically from the run seed, so
    // stage 2 with the contrastive, pseudo, and adversarial weights zeroed
    // replays exactly the batches (and updates) pre-training would make.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xBA7C4));
    let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xBA7C4) ^ 1);

    for epoch in 0..epochs {
        let t0 = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochAccum::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, labels) = gather(train_set, chunk);
            let fwd = forward_train(params, &x, &mut model_rng)?;
            let h = &fwd.heads;
            let (bl, terms) = batch_losses(&h.probs, &h.g, &h.d, &labels, &w)?;
            check_finite(&bl, stage_name, epoch)?;
            acc.add(&bl);

            // pseudo-row accuracy, for diagnostics and HPO scoring
            let b = labels.len();
            for (i, &y) in labels.iter().enumerate() {
                let row = h.probs.row(b + i);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap();
                if pred == y {
                    acc.pseudo_correct += 1;
                }
            }
            acc.pseudo_total += b;

            if source_only {
                // plain cross-entropy on the seen rows
                let up = terms.combine(1.0, 0.0, 0.0, 0.0);
                let grads = backward(params, &fwd, &up, &BackwardPlan::feature_path())?;
                adam.step(
                    params,
                    &grads,
                    &[
                        ModuleGroup::Extractor,
                        ModuleGroup::Invariant,
                        ModuleGroup::Classifier,
                    ],
                );
                continue;
            }

            // objective 1: feature path descends L1
            let up1 = terms.combine(w.lambda1, w.lambda2, w.lambda3, -w.lambda4);
            let g1 = backward(params, &fwd, &up1, &BackwardPlan::feature_path())?;

            // objective 2: discriminator descends L2 = Ld
            let g2 = if w.lambda4 > 0.0 {
                let up2 = terms.combine(0.0, 0.0, 0.0, 1.0);
                Some(backward(params, &fwd, &up2, &BackwardPlan::discriminator_only())?)
            } else {
                None
            };

            // objective 3: transformer descends L3
            let l3_ce = if w.l3_uses_lambda2 { w.lambda2 } else { w.lambda1 };
            let up3 = terms.combine(0.0, l3_ce, w.lambda3, w.lambda4);
            let g3 = backward(params, &fwd, &up3, &BackwardPlan::transformer_only())?;

            // simultaneous update from the shared forward state
            adam.step(
                params,
                &g1,
                &[
                    ModuleGroup::Extractor,
                    ModuleGroup::Invariant,
                    ModuleGroup::Classifier,
                ],
            );
            if let Some(g2) = &g2 {
                adam.step(params, g2, &[ModuleGroup::Discriminator]);
            }
            adam.step(params, &g3, &[ModuleGroup::Transformer]);
        }
        let rec = acc.record(stage_name, epoch, t0.elapsed().as_secs_f64());
        log::debug!(
            "{stage_name} epoch {epoch}: lc1={:.4} lc2={:.4} lsup={:.4} ld={:.4} pseudo_acc={:.3}",
            rec.lc1,
            rec.lc2,
            rec.lsup,
            rec.ld,
            rec.pseudo_acc
        );
        history.push(rec);
    }
    Ok(history)
}

/// Full two-stage run from a fresh initialization.
pub fn train_full(
    model_cfg: &ModelConfig,
    train_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model_cfg, &mut rng)?;
    let mut history = if cfg.ablation == Ablation::A4 {
        Vec::new() // no pre-training: the adversarial stage starts cold
    } else {
        pretrain(&mut params, train_set, cfg)?
    };
    history.extend(adversarial_train(&mut params, train_set, cfg)?);
    Ok(TrainOutcome { params, history })
}

/// Hard class predictions for a batch of windows.
pub fn predict(params: &ModelParams, x: &Array3<f64>) -> Result<Vec<usize>> {
    let (_, probs) = forward_eval(params, x)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect())
}

/// Append epoch records to a JSON-lines run log.
pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for rec in history {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Tiny synthetic task: class-dependent constant offsets plus noise.
    fn toy_set(n_per_class: usize, n_classes: usize, v: usize, k: usize, seed: u64) -> SampleSet {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_per_class * n_classes;
        let mut x = Array3::zeros((n, v, k));
        let mut labels = Vec::with_capacity(n);
        let mut mode_ids = Vec::with_capacity(n);
        for class in 0..n_classes {
            for s in 0..n_per_class {
                let row = class * n_per_class + s;
                for c in 0..v {
                    for j in 0..k {
                        let freq = 0.4 * (class as f64 + 1.0);
                        let amp = ((c + 1) as f64) * 0.5;
                        x[[row, c, j]] =
                            amp * (j as f64 * freq).sin() + rng.gen_range(-0.05..0.05);
                    }
                }
                labels.push(class);
                mode_ids.push("M1".to_string());
            }
        }
        SampleSet { x, labels, mode_ids }
    }

    fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
    }

    #[test]
    fn pretrain_learns_a_separable_toy_task() {
        let set = toy_set(12, 3, 2, 8, 0);
        let model_cfg = ModelConfig::tiny(2, 8, 3);
        let cfg = TrainConfig {
            epochs_pretrain: 40,
            epochs_train: 0,
            batch_size: 12,
            lr: 3e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train_full(&model_cfg, &set, &cfg).unwrap();
        let pred = predict(&out.params, &set.x).unwrap();
        assert!(
            accuracy(&pred, &set.labels) > 0.9,
            "accuracy {}",
            accuracy(&pred, &set.labels)
        );
        let last = out.history.last().unwrap();
        assert!(last.lc1 < out.history[0].lc1);
    }

    #[test]
    fn adversarial_stage_keeps_training_and_logs_all_terms() {
        let set = toy_set(8, 3, 2, 8, 3);
        let model_cfg = ModelConfig::tiny(2, 8, 3);
        // weights scaled down for the 8-dim toy embedding; the defaults
        // are tuned for the full-size model
        let weights = LossWeights {
            lambda1: 1.0,
            lambda2: 0.35,
            lambda3: 0.2,
            lambda4: 0.5,
            tau: 0.5,
            ..LossWeights::default()
        };
        let cfg = TrainConfig {
            epochs_pretrain: 60,
            epochs_train: 10,
            batch_size: 8,
            lr: 3e-3,
            seed: 2,
            weights,
            ..TrainConfig::default()
        };
        let out = train_full(&model_cfg, &set, &cfg).unwrap();
        let adv: Vec<_> = out.history.iter().filter(|r| r.stage == "train").collect();
        assert_eq!(adv.len(), 10);
        for rec in &adv {
            assert!(rec.lc1.is_finite() && rec.lsup.is_finite() && rec.ld.is_finite());
            assert!(!rec.pseudo_acc.is_nan());
        }
        // the adversarial run must not destroy the pretrained classifier
        let pred = predict(&out.params, &set.x).unwrap();
        let acc = accuracy(&pred, &set.labels);
        assert!(acc > 0.8, "accuracy {acc}");
    }

    #[test]
    fn reruns_are_bit_identical() {
        let set = toy_set(6, 2, 2, 8, 7);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let cfg = TrainConfig {
            epochs_pretrain: 3,
            epochs_train: 3,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_full(&model_cfg, &set, &cfg).unwrap();
        let b = train_full(&model_cfg, &set, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.lc1.to_bits(), rb.lc1.to_bits());
            assert_eq!(ra.l3.to_bits(), rb.l3.to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let set = toy_set(6, 2, 2, 8, 7);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let mk = |seed| TrainConfig {
            epochs_pretrain: 2,
            epochs_train: 2,
            batch_size: 8,
            seed,
            ..TrainConfig::default()
        };
        let a = train_full(&model_cfg, &set, &mk(1)).unwrap();
        let b = train_full(&model_cfg, &set, &mk(2)).unwrap();
        assert_ne!(a.params, b.params);
    }

    #[test]
    fn a1_is_pretrain_only() {
        let set = toy_set(6, 2, 2, 8, 5);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let cfg = TrainConfig {
            epochs_pretrain: 2,
            epochs_train: 4,
            batch_size: 8,
            seed: 3,
            ablation: Ablation::A1,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ModelParams::init(&model_cfg, &mut rng).unwrap();
        pretrain(&mut params, &set, &cfg).unwrap();
        let frozen = params.clone();
        let history = adversarial_train(&mut params, &set, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(params, frozen);
    }

    #[test]
    fn a4_skips_pretraining() {
        let set = toy_set(6, 2, 2, 8, 5);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let cfg = TrainConfig {
            epochs_pretrain: 5,
            epochs_train: 3,
            batch_size: 8,
            seed: 6,
            ablation: Ablation::A4,
            ..TrainConfig::default()
        };
        let out = train_full(&model_cfg, &set, &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.stage == "train"));
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn zeroed_weights_collapse_to_pretraining_updates() {
        // lambda2 = lambda3 = lambda4 = 0 (with lambda1 = 1): the
        // adversarial stage's updates to the feature path must replay
        // pre-training exactly; only the transformer may drift
        let set = toy_set(6, 2, 2, 8, 9);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let weights = LossWeights {
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..LossWeights::default()
        };
        let cfg = TrainConfig {
            epochs_pretrain: 3,
            epochs_train: 3,
            batch_size: 8,
            seed: 13,
            weights,
            // the collapse argument needs both stages on the same optimizer
            // schedule
            lr_adversarial: None,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ModelParams::init(&model_cfg, &mut rng).unwrap();
        let mut via_pretrain = init.clone();
        pretrain(&mut via_pretrain, &set, &cfg).unwrap();
        let mut via_adversarial = init.clone();
        adversarial_train(&mut via_adversarial, &set, &cfg).unwrap();
        assert_eq!(via_adversarial.conv1, via_pretrain.conv1);
        assert_eq!(via_adversarial.conv2, via_pretrain.conv2);
        assert_eq!(via_adversarial.conv3, via_pretrain.conv3);
        assert_eq!(via_adversarial.g, via_pretrain.g);
        assert_eq!(via_adversarial.c, via_pretrain.c);
        assert_eq!(via_adversarial.d, via_pretrain.d);
    }

    #[test]
    fn a3_freezes_the_discriminator() {
        let set = toy_set(6, 2, 2, 8, 5);
        let model_cfg = ModelConfig::tiny(2, 8, 2);
        let cfg = TrainConfig {
            epochs_pretrain: 1,
            epochs_train: 3,
            batch_size: 8,
            seed: 4,
            ablation: Ablation::A3,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ModelParams::init(&model_cfg, &mut rng).unwrap();
        pretrain(&mut params, &set, &cfg).unwrap();
        let d_before = params.d.clone();
        let h1_before = params.h1.clone();
        adversarial_train(&mut params, &set, &cfg).unwrap();
        assert_eq!(params.d, d_before);
        // transformer still trains (Lc2 and Lsup remain in L3)
        assert_ne!(params.h1, h1_before);
    }

    #[test]
    fn ablation_parsing() {
        assert_eq!("full".parse::<Ablation>().unwrap(), Ablation::Full);
        assert_eq!("A2".parse::<Ablation>().unwrap(), Ablation::A2);
        assert!("a9".parse::<Ablation>().is_err());
    }
}
