//! Thin command-line front end over the library. Each subcommand wires the
//! same calls the examples demonstrate, adds a run manifest next to its
//! outputs, and maps failures to stable exit codes:
//! 0 success, 2 usage error, 3 training aborted on a non-finite loss,
//! 1 anything else. Failures print one machine-readable JSON line to
//! stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dacn::config::Config;
use dacn::cstr::{default_faults, default_modes, generate_dataset, SimConfig};
use dacn::dataio::SampleSet;
use dacn::error::{DacnError, Result};
use dacn::hpo::{run_search, write_trials_csv, GuardedSet, SearchSpace, TrialScore};
use dacn::model::{checkpoint, forward_eval, ModelConfig, ModelParams};
use dacn::pipeline::{evaluate_split, task_from_dir, RunManifest};
use dacn::trainer::{
    adversarial_train, predict, pretrain, train_full, write_history, Ablation, TrainConfig,
};

#[derive(Parser)]
#[command(name = "dacn", version, about = "Domain-generalization fault diagnosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled CSTR dataset (CSV per series plus manifest).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mode ids (default: all three).
        #[arg(long)]
        modes: Option<String>,
        /// `all` or comma-separated fault ids like `F0,F3,F7`.
        #[arg(long, default_value = "all")]
        faults: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: cross-entropy pre-training of the feature path.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (as written by `simulate`).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: adversarial training from a pre-trained checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pre-trained checkpoint to continue from.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Start stage 2 from random weights instead (explicit opt-out).
        #[arg(long)]
        no_pretrain: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict classes for one split of a task.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which split to run: train, test1, or test2.
        #[arg(long, default_value = "test2")]
        split: String,
        /// Predictions CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split and write a metrics report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test2")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score the ablation variants side by side.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variants (full, a1, a2, a3, a4).
        #[arg(long, default_value = "full,a1,a2,a3,a4")]
        variants: String,
        /// Directory for per-variant checkpoints and the summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Hyperparameter search maximizing pseudo-feature accuracy.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        /// Trial log CSV to write (best config lands next to it).
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::new(),
    };
    if let Some(seed) = common.seed {
        cfg.set("sim.seed", seed);
        cfg.set("train.seed", seed);
        cfg.set("task.seed", seed);
        cfg.set("search.seed", seed);
    }
    Ok(cfg)
}

fn manifest(command: &str, cfg: &Config, inputs: &[&Path], outputs: &[&Path], wall_s: f64) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash: cfg.hash(),
        config_text: cfg.to_text(),
        seed: cfg.u64_or("train.seed", 0).unwrap_or(0),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_s,
        test2_accesses: None,
    }
}

fn pick_split<'a>(bundle: &'a dacn::dataio::TaskBundle, split: &str) -> Result<&'a SampleSet> {
    match split {
        "train" => Ok(&bundle.train),
        "test1" => Ok(&bundle.test1),
        "test2" => Ok(&bundle.test2),
        other => Err(DacnError::InvalidArgument(format!(
            "unknown split {other:?} (expected train/test1/test2)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, modes, faults, out } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let all_modes = default_modes();
            let modes = match modes {
                None => all_modes,
                Some(list) => {
                    let wanted: Vec<&str> = list.split(',').map(str::trim).collect();
                    let picked: Vec<_> = all_modes
                        .iter()
                        .filter(|m| wanted.contains(&m.mode_id.as_str()))
                        .cloned()
                        .collect();
                    if picked.len() != wanted.len() {
                        return Err(DacnError::InvalidArgument(format!(
                            "unknown mode in {wanted:?}; available: M1, M2, M3"
                        )));
                    }
                    picked
                }
            };
            let all_faults = default_faults(sim.onset, &sim.noise_std);
            let faults = if faults == "all" {
                all_faults
            } else {
                let wanted: Vec<&str> = faults.split(',').map(str::trim).collect();
                let picked: Vec<_> = all_faults
                    .iter()
                    .filter(|f| wanted.contains(&f.id.as_str()))
                    .cloned()
                    .collect();
                if picked.len() != wanted.len() {
                    return Err(DacnError::InvalidArgument(format!(
                        "unknown fault id in {wanted:?}; available: F0..F12"
                    )));
                }
                picked
            };
            std::fs::create_dir_all(&out)?;
            let t0 = Instant::now();
            let ds = generate_dataset(&modes, &faults, &sim, &out)?;
            let m = manifest("simulate", &cfg, &[], &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.join("run.json"))?;
            println!("wrote {} series to {}", ds.entries.len(), out.display());
            Ok(())
        }
        Command::Pretrain { common, data, out } => {
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let model_cfg = ModelConfig::from_config(&cfg, bundle.n_classes)?;
            let train_cfg = TrainConfig::from_config(&cfg)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(train_cfg.seed);
            let mut params = ModelParams::init(&model_cfg, &mut rng)?;
            let history = pretrain(&mut params, &bundle.train, &train_cfg)?;
            checkpoint::save(&params, &cfg.hash(), &out)?;
            write_history(&history, &out.with_extension("jsonl"))?;
            let m = manifest("pretrain", &cfg, &[&data], &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.with_extension("run.json"))?;
            println!(
                "pretrained {} epochs, final Lc1 {:.4}",
                history.len(),
                history.last().map(|r| r.lc1).unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Train { common, data, from, no_pretrain, out } => {
            if from.is_none() && !no_pretrain {
                return Err(DacnError::InvalidArgument(
                    "train needs --from <checkpoint> or an explicit --no-pretrain".into(),
                ));
            }
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let model_cfg = ModelConfig::from_config(&cfg, bundle.n_classes)?;
            let train_cfg = TrainConfig::from_config(&cfg)?;
            let mut params = match &from {
                Some(ckpt) => {
                    let (params, _) = checkpoint::load(ckpt)?;
                    if params.cfg != model_cfg {
                        return Err(DacnError::Checkpoint(format!(
                            "checkpoint model {:?} differs from configured {:?}",
                            params.cfg, model_cfg
                        )));
                    }
                    params
                }
                None => {
                    let mut rng =
                        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(train_cfg.seed);
                    ModelParams::init(&model_cfg, &mut rng)?
                }
            };
            let history = adversarial_train(&mut params, &bundle.train, &train_cfg)?;
            checkpoint::save(&params, &cfg.hash(), &out)?;
            write_history(&history, &out.with_extension("jsonl"))?;
            let mut inputs: Vec<&Path> = vec![data.as_path()];
            if let Some(f) = &from {
                inputs.push(f.as_path());
            }
            let m = manifest("train", &cfg, &inputs, &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.with_extension("run.json"))?;
            println!("trained {} epochs", history.len());
            Ok(())
        }
        Command::Infer { common, ckpt, data, split, out } => {
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let (params, _) = checkpoint::load(&ckpt)?;
            let set = pick_split(&bundle, &split)?;
            let (_, probs) = forward_eval(&params, &set.x)?;
            let pred = predict(&params, &set.x)?;
            let mut text = String::from("index,mode,truth,pred");
            for c in 0..probs.ncols() {
                text.push_str(&format!(",p{c}"));
            }
            text.push('\n');
            for i in 0..pred.len() {
                text.push_str(&format!("{i},{},{},{}", set.mode_ids[i], set.labels[i], pred[i]));
                for p in probs.row(i) {
                    text.push_str(&format!(",{p}"));
                }
                text.push('\n');
            }
            std::fs::write(&out, text)?;
            let m = manifest("infer", &cfg, &[&data, &ckpt], &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.with_extension("run.json"))?;
            println!("wrote {} predictions", pred.len());
            Ok(())
        }
        Command::Evaluate { common, ckpt, data, split, out } => {
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let (params, _) = checkpoint::load(&ckpt)?;
            let set = pick_split(&bundle, &split)?;
            let report = evaluate_split(&params, set, bundle.n_classes)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            let m = manifest("evaluate", &cfg, &[&data, &ckpt], &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.with_extension("run.json"))?;
            println!("{split} accuracy {:.4}", report.metrics.accuracy);
            Ok(())
        }
        Command::Ablate { common, data, variants, out } => {
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let model_cfg = ModelConfig::from_config(&cfg, bundle.n_classes)?;
            let base = TrainConfig::from_config(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let mut rows = Vec::new();
            for name in variants.split(',').map(str::trim) {
                let ablation: Ablation = name.parse()?;
                let train_cfg = TrainConfig { ablation, ..base.clone() };
                let outcome = train_full(&model_cfg, &bundle.train, &train_cfg)?;
                let ckpt_path = out.join(format!("{}.ckpt", ablation.name()));
                checkpoint::save(&outcome.params, &cfg.hash(), &ckpt_path)?;
                let test1 = evaluate_split(&outcome.params, &bundle.test1, bundle.n_classes)?;
                let test2 = evaluate_split(&outcome.params, &bundle.test2, bundle.n_classes)?;
                println!(
                    "{}: test1 {:.4} test2 {:.4}",
                    ablation.name(),
                    test1.metrics.accuracy,
                    test2.metrics.accuracy
                );
                rows.push(serde_json::json!({
                    "variant": ablation.name(),
                    "test1_acc": test1.metrics.accuracy,
                    "test2_acc": test2.metrics.accuracy,
                }));
            }
            std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&rows)?)?;
            let m = manifest("ablate", &cfg, &[&data], &[&out], t0.elapsed().as_secs_f64());
            m.write(&out.join("run.json"))?;
            Ok(())
        }
        Command::Search { common, data, budget, out } => {
            let cfg = load_config(&common)?;
            let t0 = Instant::now();
            let bundle = task_from_dir(&cfg, &data)?;
            let model_cfg = ModelConfig::from_config(&cfg, bundle.n_classes)?;
            let base = TrainConfig::from_config(&cfg)?;
            let mut space = SearchSpace::from_config(&cfg)?;
            if let Some(b) = budget {
                space.budget = b;
            }
            // the unseen-mode split goes behind an access counter and must
            // come back untouched
            let guard = GuardedSet::new(bundle.test2.clone());
            let result = run_search(&space, |trial| {
                let train_cfg = TrainConfig {
                    weights: trial.to_weights(&base.weights),
                    lr: trial.lr,
                    // the sampled rate drives both stages
                    lr_adversarial: None,
                    ..base.clone()
                };
                let t = Instant::now();
                let outcome = train_full(&model_cfg, &bundle.train, &train_cfg)?;
                let pseudo_acc = outcome
                    .history
                    .iter()
                    .rev()
                    .find(|r| r.stage == "train")
                    .map(|r| r.pseudo_acc)
                    .unwrap_or(f64::NAN);
                let test1 = evaluate_split(&outcome.params, &bundle.test1, bundle.n_classes)?;
                Ok(TrialScore {
                    pseudo_acc,
                    test1_acc: test1.metrics.accuracy,
                    wall_s: t.elapsed().as_secs_f64(),
                })
            });
            write_trials_csv(&result, &out)?;
            if let Some(best) = &result.best {
                let mut best_cfg = cfg.clone();
                best_cfg.set("loss.lambda1", best.params.lambda1);
                best_cfg.set("loss.lambda2", best.params.lambda2);
                best_cfg.set("loss.lambda3", best.params.lambda3);
                best_cfg.set("loss.lambda4", best.params.lambda4);
                best_cfg.set("loss.tau", best.params.tau);
                best_cfg.set("train.lr", best.params.lr);
                std::fs::write(out.with_extension("best.cfg"), best_cfg.to_text())?;
                println!(
                    "best trial {}: pseudo_acc {:.4}",
                    best.trial,
                    best.score.unwrap().pseudo_acc
                );
            } else {
                println!("no successful trials");
            }
            let mut m = manifest("search", &cfg, &[&data], &[&out], t0.elapsed().as_secs_f64());
            m.test2_accesses = Some(guard.accesses());
            m.write(&out.with_extension("run.json"))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match &e {
                DacnError::NanLoss { .. } => ("nan_abort", 3),
                DacnError::InvalidArgument(_) | DacnError::Config(_) => ("usage", 2),
                _ => ("error", 1),
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "kind": kind })
            );
            ExitCode::from(code)
        }
    }
}
