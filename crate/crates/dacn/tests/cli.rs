//! End-to-end smoke tests of the command-line interface: every subcommand on
//! a miniature dataset, plus the documented exit codes.

use std::path::Path;
use std::process::Command;

fn dacn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dacn"))
}

/// A configuration small enough that every subcommand finishes in seconds.
const MINI_CFG: &str = "\
sim.duration = 300
sim.onset = 100
sim.seed = 0
task.source_mode = M1
task.target_modes = M2
task.k = 32
task.split_ratio = 0.8
task.samples_per_class = 30
task.onset = 100
task.seed = 0
model.k = 32
model.channels = 8
model.noise_dim = 8
model.g_dim = 16
train.epochs_pretrain = 1
train.epochs_train = 1
train.batch_size = 16
train.lr = 0.001
train.seed = 0
search.budget = 2
";

struct Mini {
    dir: tempfile::TempDir,
}

impl Mini {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mini.cfg"), MINI_CFG).unwrap();
        let out = dacn()
            .args(["simulate", "--config"])
            .arg(dir.path().join("mini.cfg"))
            .args(["--modes", "M1,M2", "--faults", "F0,F1,F2"])
            .arg("--out")
            .arg(dir.path().join("data"))
            .output()
            .unwrap();
        assert!(out.status.success(), "simulate failed: {out:?}");
        Mini { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> std::process::Output {
        let mut cmd = dacn();
        for a in args {
            // expand @name to a path inside the temp dir
            if let Some(rest) = a.strip_prefix('@') {
                cmd.arg(self.path(rest));
            } else {
                cmd.arg(a);
            }
        }
        cmd.output().unwrap()
    }
}

#[test]
fn full_command_round_trip() {
    let m = Mini::new();
    assert!(m.path("data/manifest.json").exists());
    assert!(m.path("data/M1_F0.csv").exists());
    assert!(m.path("data/run.json").exists());

    let out = m.run(&["pretrain", "--config", "@mini.cfg", "--data", "@data", "--out", "@pre.ckpt"]);
    assert!(out.status.success(), "pretrain failed: {out:?}");
    assert!(m.path("pre.ckpt").exists());
    assert!(m.path("pre.jsonl").exists());

    let out = m.run(&[
        "train", "--config", "@mini.cfg", "--data", "@data", "--from", "@pre.ckpt", "--out",
        "@full.ckpt",
    ]);
    assert!(out.status.success(), "train failed: {out:?}");

    let out = m.run(&[
        "infer", "--config", "@mini.cfg", "--ckpt", "@full.ckpt", "--data", "@data", "--split",
        "test1", "--out", "@pred.csv",
    ]);
    assert!(out.status.success(), "infer failed: {out:?}");
    let pred = std::fs::read_to_string(m.path("pred.csv")).unwrap();
    let header = pred.lines().next().unwrap();
    assert!(header.starts_with("index,mode,truth,pred,p0"));
    assert!(pred.lines().count() > 1);

    let out = m.run(&[
        "evaluate", "--config", "@mini.cfg", "--ckpt", "@full.ckpt", "--data", "@data", "--split",
        "test2", "--out", "@eval.json",
    ]);
    assert!(out.status.success(), "evaluate failed: {out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(m.path("eval.json")).unwrap()).unwrap();
    assert!(report["metrics"]["accuracy"].is_number());
    assert!(report["n_params_infer"].as_u64().unwrap() > 0);
}

#[test]
fn ablate_writes_per_variant_checkpoints_and_summary() {
    let m = Mini::new();
    let out = m.run(&[
        "ablate", "--config", "@mini.cfg", "--data", "@data", "--variants", "full,a1", "--out",
        "@abl",
    ]);
    assert!(out.status.success(), "ablate failed: {out:?}");
    assert!(m.path("abl/full.ckpt").exists());
    assert!(m.path("abl/a1.ckpt").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(m.path("abl/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn search_logs_trials_and_never_reads_test2() {
    let m = Mini::new();
    let out = m.run(&[
        "search", "--config", "@mini.cfg", "--data", "@data", "--budget", "2", "--out",
        "@trials.csv",
    ]);
    assert!(out.status.success(), "search failed: {out:?}");
    let csv = std::fs::read_to_string(m.path("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two trials");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(m.path("trials.run.json")).unwrap()).unwrap();
    assert_eq!(manifest["test2_accesses"], 0);
}

#[test]
fn checkpoints_are_reproducible_for_identical_seed() {
    let m = Mini::new();
    for out_name in ["a.ckpt", "b.ckpt"] {
        let out = dacn()
            .args(["pretrain", "--config"])
            .arg(m.path("mini.cfg"))
            .args(["--seed", "7", "--data"])
            .arg(m.path("data"))
            .arg("--out")
            .arg(m.path(out_name))
            .output()
            .unwrap();
        assert!(out.status.success(), "pretrain failed: {out:?}");
    }
    let a = std::fs::read(m.path("a.ckpt")).unwrap();
    let b = std::fs::read(m.path("b.ckpt")).unwrap();
    assert_eq!(a, b, "same config and seed must give identical checkpoints");
}

#[test]
fn usage_errors_exit_2_with_json_line() {
    // train without --from or --no-pretrain
    let out = dacn()
        .args(["train", "--data", "/nonexistent", "--out", "/tmp/never.ckpt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap())
            .unwrap();
    assert_eq!(line["kind"], "usage");

    // unknown split name
    let m = Mini::new();
    let pre = dacn()
        .args(["pretrain", "--config"])
        .arg(m.path("mini.cfg"))
        .arg("--data")
        .arg(m.path("data"))
        .arg("--out")
        .arg(m.path("p.ckpt"))
        .output()
        .unwrap();
    assert!(pre.status.success());
    let out = m.run(&[
        "infer", "--config", "@mini.cfg", "--ckpt", "@p.ckpt", "--data", "@data", "--split",
        "test9", "--out", "@x.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let out = dacn()
        .args([
            "evaluate", "--ckpt", "/nonexistent.ckpt", "--data", "/nonexistent", "--out",
            "/tmp/never.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_equal_length_series_and_manifest() {
    let m = Mini::new();
    let healthy = std::fs::read_to_string(m.path("data/M1_F0.csv")).unwrap();
    let faulty = std::fs::read_to_string(m.path("data/M1_F1.csv")).unwrap();
    assert_eq!(healthy.lines().count(), faulty.lines().count());
    assert!(Path::new(&m.path("data/manifest.json")).exists());
}
