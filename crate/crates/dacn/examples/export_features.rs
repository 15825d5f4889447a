//! Train briefly, then export the 256-dimensional domain-invariant
//! embeddings of every split as CSV (label, mode, g0..g255) for external
//! projection or clustering tools.
//!
//! Usage: `cargo run --release --example export_features [OUT_DIR]`

use std::path::PathBuf;

use dacn::cstr::{default_faults, default_modes, generate_series, SimConfig};
use dacn::dataio::{build_task, LabelPolicy, StatsScope, TaskSpec};
use dacn::eval::export_features;
use dacn::model::ModelConfig;
use dacn::pipeline::embed_split;
use dacn::trainer::{train_full, TrainConfig};

fn main() -> dacn::Result<()> {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/features"));
    std::fs::create_dir_all(&out_dir)?;

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

    for (name, set) in [
        ("train", &bundle.train),
        ("test1", &bundle.test1),
        ("test2", &bundle.test2),
    ] {
        let g = embed_split(&outcome.params, set)?;
        let path = out_dir.join(format!("{name}_features.csv"));
        export_features(&g, &set.labels, &set.mode_ids, &path)?;
        println!(
            "{}: {} rows x {} dims -> {}",
            name,
            g.nrows(),
            g.ncols(),
            path.display()
        );
    }
    Ok(())
}
