//! Train the method and its four knockout variants side by side on one task
//! and compare seen-mode (test1) and unseen-mode (test2) accuracy:
//!
//! - full: both stages with every loss term
//! - a1:   pre-training only (the adversarial stage is skipped)
//! - a2:   no contrastive alignment (lambda3 = 0)
//! - a3:   no discriminator game (lambda4 = 0)
//! - a4:   no pre-training (the adversarial stage starts from random weights)
//!
//! Usage: `cargo run --release --example ablation_study`

use dacn::cstr::{default_faults, default_modes, generate_series, SimConfig};
use dacn::dataio::{build_task, LabelPolicy, StatsScope, TaskSpec};
use dacn::model::ModelConfig;
use dacn::pipeline::evaluate_split;
use dacn::trainer::{train_full, Ablation, TrainConfig};

fn main() -> dacn::Result<()> {
    let sim = SimConfig::default();
    let series = generate_series(
        &default_modes(),
        &default_faults(sim.onset, &sim.noise_std),
        &sim,
    )?;
    let spec = TaskSpec {
        source_mode: "M1".into(),
        target_modes: vec!["M2".into(), "M3".into()],
        k: 64,
        split_ratio: 0.8,
        seed: 0,
        samples_per_class: Some(80),
        onset: sim.onset,
        label_policy: LabelPolicy::WindowEnd,
        stats_scope: StatsScope::OwnMode,
        keep_preonset_normal: false,
    };
    let bundle = build_task(&spec, &series)?;

    // reduced model so the five variants finish quickly
    let model_cfg = ModelConfig {
        channels: 32,
        noise_dim: 32,
        g_dim: 64,
        ..ModelConfig::cstr_default(bundle.n_classes)
    };
    let base = TrainConfig {
        epochs_pretrain: 4,
        epochs_train: 6,
        batch_size: 64,
        ..TrainConfig::default()
    };

    println!("{:<6} {:>8} {:>8}", "variant", "test1", "test2");
    for ablation in [
        Ablation::Full,
        Ablation::A1,
        Ablation::A2,
        Ablation::A3,
        Ablation::A4,
    ] {
        let cfg = TrainConfig { ablation, ..base.clone() };
        let outcome = train_full(&model_cfg, &bundle.train, &cfg)?;
        let test1 = evaluate_split(&outcome.params, &bundle.test1, bundle.n_classes)?;
        let test2 = evaluate_split(&outcome.params, &bundle.test2, bundle.n_classes)?;
        println!(
            "{:<6} {:>8.4} {:>8.4}",
            ablation.name(),
            test1.metrics.accuracy,
            test2.metrics.accuracy
        );
    }
    Ok(())
}
