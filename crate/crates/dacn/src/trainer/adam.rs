//! Adam with one moment store per model, applied group-selectively so the
//! three objectives can update disjoint module groups from a shared step.

use crate::error::Result;
use crate::model::{Grads, ModelConfig, ModelParams, ModuleGroup};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier for the discriminator group. In the
    /// adversarial game the feature path maximizes the unnormalized
    /// discriminative sum, so the discriminator may need a faster clock to
    /// keep the game balanced.
    pub disc_lr_mult: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            disc_lr_mult: 1.0,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    /// Per-group step counts: bias correction must track how often each
    /// group has actually been updated.
    steps: [u64; 5],
}

fn group_index(g: ModuleGroup) -> usize {
    match g {
        ModuleGroup::Extractor => 0,
        ModuleGroup::Transformer => 1,
        ModuleGroup::Invariant => 2,
        ModuleGroup::Classifier => 3,
        ModuleGroup::Discriminator => 4,
    }
}

impl Adam {
    pub fn new(model_cfg: &ModelConfig, cfg: AdamConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            m: ModelParams::zeros(model_cfg)?,
            v: ModelParams::zeros(model_cfg)?,
            steps: [0; 5],
        })
    }

    /// Apply one Adam step to the listed groups only.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads, groups: &[ModuleGroup]) {
        for &g in groups {
            self.steps[group_index(g)] += 1;
        }
        let (b1, b2, eps, lr) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.lr);
        let steps = self.steps;

        // walk all four stores in lockstep
        let mut grad_slices: Vec<(ModuleGroup, Vec<f64>)> = Vec::new();
        grads.visit(|g, s| grad_slices.push((g, s.to_vec())));
        let mut m_slices: Vec<&mut [f64]> = Vec::new();
        // SAFETY-free approach: collect raw updates via visit_mut twice is
        // awkward; instead update m and v first, then params.
        let _ = &mut m_slices;

        let mut idx = 0;
        self.m.visit_mut(|g, m| {
            debug_assert_eq!(g, grad_slices[idx].0);
            if groups.contains(&g) {
                for (mv, &gv) in m.iter_mut().zip(&grad_slices[idx].1) {
                    *mv = b1 * *mv + (1.0 - b1) * gv;
                }
            }
            idx += 1;
        });
        idx = 0;
        self.v.visit_mut(|g, v| {
            if groups.contains(&g) {
                for (vv, &gv) in v.iter_mut().zip(&grad_slices[idx].1) {
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                }
            }
            idx += 1;
        });

        let mut m_now: Vec<Vec<f64>> = Vec::new();
        self.m.visit(|_, s| m_now.push(s.to_vec()));
        let mut v_now: Vec<Vec<f64>> = Vec::new();
        self.v.visit(|_, s| v_now.push(s.to_vec()));

        let disc_mult = self.cfg.disc_lr_mult;
        idx = 0;
        params.visit_mut(|g, p| {
            if groups.contains(&g) {
                let t = steps[group_index(g)] as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                let lr_g = if g == ModuleGroup::Discriminator {
                    lr * disc_mult
                } else {
                    lr
                };
                for ((pv, &mv), &vv) in p.iter_mut().zip(&m_now[idx]).zip(&v_now[idx]) {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *pv -= lr_g * mhat / (vhat.sqrt() + eps);
                }
            }
            idx += 1;
        });
    }
}
