//! Closed-loop simulation and dataset generation: one labeled time series
//! per (mode, fault) pair, written as CSV plus a JSON manifest.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{DacnError, Result};

use super::control::ControllerState;
use super::fault::{FaultSpec, CHANNEL_NAMES};
use super::plant::{derivatives, rk4_step, steady_state, PlantParams, PlantState};

/// An operating mode: a reactor-temperature setpoint offset from the base
/// operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mode_id: String,
    /// Setpoint offset from the base operating temperature (K).
    pub setpoint_offset: f64,
}

/// The three benchmark modes: base setpoint, +5 K, +10 K.
pub fn default_modes() -> Vec<ModeSpec> {
    vec![
        ModeSpec { mode_id: "M1".into(), setpoint_offset: 0.0 },
        ModeSpec { mode_id: "M2".into(), setpoint_offset: 5.0 },
        ModeSpec { mode_id: "M3".into(), setpoint_offset: 10.0 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: PlantParams,
    /// Base reactor-temperature setpoint (K); modes offset from this.
    pub base_setpoint: f64,
    /// Total simulated time (min).
    pub duration: f64,
    /// Recording interval (min).
    pub sample_interval: f64,
    /// RK4 sub-steps per recording interval.
    pub substeps: usize,
    /// Fault injection time (min) used when building the default fault set.
    pub onset: f64,
    pub kp: f64,
    pub ki: f64,
    pub qc_min: f64,
    pub qc_max: f64,
    /// Per-channel measurement-noise standard deviation.
    pub noise_std: [f64; 7],
    /// Root seed; per-series seeds are derived from it.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: PlantParams::default(),
            base_setpoint: 402.0,
            duration: 1200.0,
            sample_interval: 1.2,
            substeps: 24,
            onset: 200.0,
            kp: 4.0,
            ki: 1.0,
            qc_min: 0.0,
            qc_max: 100.0,
            noise_std: [0.01, 0.5, 0.5, 0.1, 0.01, 0.5, 0.5],
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        let mut noise_std = d.noise_std;
        for (i, name) in CHANNEL_NAMES.iter().enumerate() {
            noise_std[i] = cfg.f64_or(&format!("sim.noise_std.{name}"), d.noise_std[i])?;
        }
        Ok(Self {
            params: PlantParams::from_config(cfg)?,
            base_setpoint: cfg.f64_or("sim.base_setpoint", d.base_setpoint)?,
            duration: cfg.f64_or("sim.duration", d.duration)?,
            sample_interval: cfg.f64_or("sim.sample_interval", d.sample_interval)?,
            substeps: cfg.usize_or("sim.substeps", d.substeps)?,
            onset: cfg.f64_or("sim.onset", d.onset)?,
            kp: cfg.f64_or("sim.kp", d.kp)?,
            ki: cfg.f64_or("sim.ki", d.ki)?,
            qc_min: cfg.f64_or("sim.qc_min", d.qc_min)?,
            qc_max: cfg.f64_or("sim.qc_max", d.qc_max)?,
            noise_std,
            seed: cfg.u64_or("sim.seed", d.seed)?,
        })
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.sample_interval).round() as usize
    }

    /// Stable per-series seed: a hash of (root seed, mode, fault), so it does
    /// not depend on generation order.
    pub fn series_seed(&self, mode_id: &str, fault_id: &str) -> u64 {
        derive_seed(self.seed, mode_id, fault_id)
    }

    fn hash_text(&self) -> String {
        format!("{self:?}")
    }

    /// Hash of every value that influences the output bytes.
    pub fn config_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.hash_text().as_bytes());
        hex::encode(hasher.finalize())
    }
}

pub fn derive_seed(base: u64, mode_id: &str, fault_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(mode_id.as_bytes());
    hasher.update(b"/");
    hasher.update(fault_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A recorded multivariate time series for one (mode, fault) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub times: Vec<f64>,
    /// n_steps x v measurements.
    pub channels: Array2<f64>,
    pub channel_names: Vec<String>,
    pub fault_id: String,
    pub mode_id: String,
    pub seed: u64,
}

impl RawSeries {
    pub fn n_steps(&self) -> usize {
        self.channels.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.ncols()
    }
}

const TEMP_BLOWUP_LIMIT: f64 = 1e4;

/// Run one closed-loop trajectory. Parameter faults alter the physics from
/// the onset; sensor faults bias recorded channels only (the reactor
/// temperature sensor also feeds the controller). Measurement noise is
/// seeded Gaussian, per channel, drawn once per recorded sample.
pub fn simulate(
    mode: &ModeSpec,
    fault: &FaultSpec,
    cfg: &SimConfig,
    seed: u64,
) -> Result<RawSeries> {
    cfg.params.validate()?;
    fault.validate(cfg.duration)?;
    if cfg.sample_interval <= 0.0 || cfg.substeps == 0 {
        return Err(DacnError::InvalidArgument(
            "sample_interval and substeps must be positive".into(),
        ));
    }

    let setpoint = cfg.base_setpoint + mode.setpoint_offset;
    let op = steady_state(&cfg.params, setpoint)?;
    let mut controller = ControllerState::new(
        setpoint, cfg.kp, cfg.ki, op.qc, cfg.qc_min, cfg.qc_max,
    );
    let mut state = PlantState {
        c: op.c,
        t_reactor: op.t_reactor,
        t_coolant: op.t_coolant,
        t: 0.0,
    };

    let n_steps = cfg.n_steps();
    let dt = cfg.sample_interval / cfg.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut channels = Array2::zeros((n_steps, CHANNEL_NAMES.len()));
    let mut times = Vec::with_capacity(n_steps);
    let mut qc = op.qc;

    for row in 0..n_steps {
        for _ in 0..cfg.substeps {
            let t_measured = state.t_reactor + fault.sensor_bias("T", state.t);
            qc = controller.update(t_measured, dt);
            let mut rhs = |t: f64, y: &[f64; 3]| {
                let s = PlantState { c: y[0], t_reactor: y[1], t_coolant: y[2], t };
                // Parameter faults are evaluated at the RK4 stage time, so a
                // stage crossing the onset already sees the faulted plant.
                let p = fault.apply_to_params(&cfg.params, t).unwrap_or(cfg.params);
                derivatives(&s, qc, &p).unwrap_or([f64::NAN; 3])
            };
            let y = rk4_step(&mut rhs, state.t, &[state.c, state.t_reactor, state.t_coolant], dt);
            state = PlantState { c: y[0].max(0.0), t_reactor: y[1], t_coolant: y[2], t: state.t + dt };
            if !state.is_finite() || state.t_reactor.abs() > TEMP_BLOWUP_LIMIT {
                return Err(DacnError::SimulationDiverged {
                    t: state.t,
                    limit: TEMP_BLOWUP_LIMIT,
                    fault: fault.id.clone(),
                    mode: mode.mode_id.clone(),
                });
            }
        }
        let eff = fault.apply_to_params(&cfg.params, state.t)?;
        let truth = [
            state.c,
            state.t_reactor,
            state.t_coolant,
            qc,
            eff.ci,
            eff.ti,
            eff.tci,
        ];
        for (ch, name) in CHANNEL_NAMES.iter().enumerate() {
            let noise = normal.sample(&mut rng) * cfg.noise_std[ch];
            channels[[row, ch]] = truth[ch] + fault.sensor_bias(name, state.t) + noise;
        }
        times.push(state.t);
    }

    Ok(RawSeries {
        times,
        channels,
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        fault_id: fault.id.clone(),
        mode_id: mode.mode_id.clone(),
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mode_id: String,
    pub fault_id: String,
    pub file: String,
    pub n_rows: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub channel_names: Vec<String>,
    pub onset: f64,
    pub sample_interval: f64,
    pub entries: Vec<ManifestEntry>,
}

/// Simulate every (mode, fault) pair in memory.
pub fn generate_series(
    modes: &[ModeSpec],
    faults: &[FaultSpec],
    cfg: &SimConfig,
) -> Result<Vec<RawSeries>> {
    let mut out = Vec::with_capacity(modes.len() * faults.len());
    for mode in modes {
        for fault in faults {
            let seed = cfg.series_seed(&mode.mode_id, &fault.id);
            out.push(simulate(mode, fault, cfg, seed)?);
        }
    }
    Ok(out)
}

/// Simulate every (mode, fault) pair, writing one CSV per series plus
/// `manifest.json`. Files written before a failure are removed.
pub fn generate_dataset(
    modes: &[ModeSpec],
    faults: &[FaultSpec],
    cfg: &SimConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let config_hash = cfg.config_hash();
        let mut entries = Vec::new();
        for mode in modes {
            for fault in faults {
                let seed = cfg.series_seed(&mode.mode_id, &fault.id);
                let series = simulate(mode, fault, cfg, seed)?;
                let file = format!("{}_{}.csv", mode.mode_id, fault.id);
                let path = out_dir.join(&file);
                write_series_csv(&series, &path)?;
                written.push(path);
                entries.push(ManifestEntry {
                    mode_id: mode.mode_id.clone(),
                    fault_id: fault.id.clone(),
                    file,
                    n_rows: series.n_steps(),
                    seed,
                    config_hash: config_hash.clone(),
                });
            }
        }
        let manifest = DatasetManifest {
            channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            onset: cfg.onset,
            sample_interval: cfg.sample_interval,
            entries,
        };
        let manifest_path = out_dir.join("manifest.json");
        std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        written.push(manifest_path);
        Ok(manifest)
    })();
    if result.is_err() {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}

/// CSV layout: header `t,<channels...>`, then one row per sample. Floats are
/// printed in shortest round-trip form, so re-ingesting is lossless.
pub fn write_series_csv(series: &RawSeries, path: &Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "t")?;
    for name in &series.channel_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (i, t) in series.times.iter().enumerate() {
        write!(w, "{t}")?;
        for ch in 0..series.n_channels() {
            write!(w, ",{}", series.channels[[i, ch]])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
