//! Glue shared by the command-line binary and the examples: building tasks
//! from dataset directories, scoring checkpoints on a split, and writing
//! self-describing run manifests.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataio::{build_task, load_dataset, SampleSet, TaskBundle, TaskSpec};
use crate::error::Result;
use crate::eval::{report, MetricsReport};
use crate::model::{forward_eval, ModelParams, Stage};
use crate::trainer::predict;

/// Everything needed to reproduce a run: the exact configuration (by hash
/// and full text), the command, and the artifacts it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config_text: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_s: f64,
    /// How often the unseen-mode split was read during the run. Stays zero
    /// for every command that must not touch it (notably `search`).
    pub test2_accesses: Option<usize>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Load a dataset directory and assemble the task its config describes.
pub fn task_from_dir(cfg: &Config, data_dir: &Path) -> Result<TaskBundle> {
    let series = load_dataset(data_dir)?;
    let spec = TaskSpec::from_config(cfg)?;
    build_task(&spec, &series)
}

/// Metrics plus the cost figures for one evaluated split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub n_params_train: usize,
    pub n_params_infer: usize,
    pub infer_s: f64,
}

pub fn evaluate_split(params: &ModelParams, set: &SampleSet, n_classes: usize) -> Result<EvalReport> {
    let t0 = Instant::now();
    let pred = predict(params, &set.x)?;
    let infer_s = t0.elapsed().as_secs_f64();
    Ok(EvalReport {
        metrics: report(&set.labels, &pred, &set.mode_ids, n_classes)?,
        n_params_train: params.count_params(Stage::Training),
        n_params_infer: params.count_params(Stage::Inference),
        infer_s,
    })
}

/// Embeddings of a split, for feature export.
pub fn embed_split(params: &ModelParams, set: &SampleSet) -> Result<ndarray::Array2<f64>> {
    let (g, _) = forward_eval(params, &set.x)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_report_counts_params_per_stage() {
        let cfg = ModelConfig::tiny(2, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let set = SampleSet {
            x: Array3::zeros((4, 2, 8)),
            labels: vec![0, 1, 0, 1],
            mode_ids: vec!["M2".into(); 4],
        };
        let rep = evaluate_split(&params, &set, 2).unwrap();
        assert!(rep.n_params_infer < rep.n_params_train);
        assert_eq!(rep.metrics.n_samples, 4);
    }

    #[test]
    fn manifest_round_trips() {
        let m = RunManifest {
            command: "train".into(),
            config_hash: "deadbeef".into(),
            config_text: "task.k = 64\n".into(),
            seed: 7,
            inputs: vec!["data/".into()],
            outputs: vec!["model.ckpt".into()],
            wall_s: 1.0,
            test2_accesses: Some(0),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        m.write(&path).unwrap();
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.config_hash, "deadbeef");
        assert_eq!(back.test2_accesses, Some(0));
    }
}
