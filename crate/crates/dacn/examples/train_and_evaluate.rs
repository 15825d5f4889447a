//! End-to-end run at a reduced scale: simulate the benchmark, assemble a
//! single-source task (train on mode M1, diagnose on unseen M2/M3), run both
//! training stages, and score the seen-mode and unseen-mode test sets.
//!
//! The model and sample counts here are scaled down so the example finishes
//! in well under a minute; `configs/cstr_t1.cfg` carries the full-size
//! settings used by the `dacn` binary.
//!
//! Usage: `cargo run --release --example train_and_evaluate`

use dacn::cstr::{default_faults, default_modes, generate_series, SimConfig};
use dacn::dataio::{build_task, LabelPolicy, StatsScope, TaskSpec};
use dacn::model::{checkpoint, ModelConfig};
use dacn::pipeline::evaluate_split;
use dacn::trainer::{train_full, TrainConfig};

fn main() -> dacn::Result<()> {
    // 1. Simulate all 39 (mode, fault) series in memory.
    let sim = SimConfig::default();
    let series = generate_series(
        &default_modes(),
        &default_faults(sim.onset, &sim.noise_std),
        &sim,
    )?;
    println!("simulated {} series", series.len());

    // 2. Assemble the task: windows of 64 samples, source mode M1 split
    //    80/20 into train/test1, unseen modes M2+M3 as test2.
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
    println!(
        "task: {} train / {} test1 (seen mode) / {} test2 (unseen modes), {} classes",
        bundle.train.labels.len(),
        bundle.test1.labels.len(),
        bundle.test2.labels.len(),
        bundle.n_classes
    );

    // 3. Train: cross-entropy pre-training, then the adversarial stage with
    //    pseudo-sample generation, contrastive alignment, and the
    //    discriminator game.
    let model_cfg = ModelConfig {
        channels: 32,
        noise_dim: 32,
        g_dim: 64,
        ..ModelConfig::cstr_default(bundle.n_classes)
    };
    let train_cfg = TrainConfig {
        epochs_pretrain: 4,
        epochs_train: 6,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let outcome = train_full(&model_cfg, &bundle.train, &train_cfg)?;
    for r in &outcome.history {
        println!(
            "  {} epoch {:2}: Lc1 {:.4} Lc2 {:.4} Lsup {:8.2} Ld {:8.2} pseudo_acc {:.3}",
            r.stage, r.epoch, r.lc1, r.lc2, r.lsup, r.ld, r.pseudo_acc
        );
    }

    // 4. Score both test sets and persist the model.
    let test1 = evaluate_split(&outcome.params, &bundle.test1, bundle.n_classes)?;
    let test2 = evaluate_split(&outcome.params, &bundle.test2, bundle.n_classes)?;
    println!(
        "seen-mode accuracy {:.4}, unseen-mode accuracy {:.4}",
        test1.metrics.accuracy, test2.metrics.accuracy
    );
    println!(
        "per-mode accuracy on test2: {:?}",
        test2.metrics.per_mode_accuracy
    );
    println!(
        "parameters: {} training, {} inference",
        test1.n_params_train, test1.n_params_infer
    );

    let ckpt = std::path::Path::new("target/train_and_evaluate.ckpt");
    checkpoint::save(&outcome.params, "example", ckpt)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}
