//! Generate the full benchmark dataset: three operating modes x thirteen
//! health classes of the closed-loop CSTR, written as one CSV per series
//! plus a `manifest.json` describing the files.
//!
//! Usage: `cargo run --release --example simulate_dataset [OUT_DIR]`

use std::path::PathBuf;

use dacn::cstr::{default_faults, default_modes, generate_dataset, SimConfig};

fn main() -> dacn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/cstr_data"));

    let cfg = SimConfig::default();
    let modes = default_modes();
    let faults = default_faults(cfg.onset, &cfg.noise_std);

    println!(
        "simulating {} modes x {} classes, {} samples each ({} min at {} min/sample)...",
        modes.len(),
        faults.len(),
        cfg.n_steps(),
        cfg.duration,
        cfg.sample_interval
    );
    let manifest = generate_dataset(&modes, &faults, &cfg, &out)?;

    println!("wrote {} series to {}", manifest.entries.len(), out.display());
    for e in manifest.entries.iter().take(3) {
        println!("  {} ({} rows, seed {})", e.file, e.n_rows, e.seed);
    }
    println!("  ...");
    println!("fault onset at t = {} min; columns: {:?}", manifest.onset, manifest.channel_names);
    Ok(())
}
