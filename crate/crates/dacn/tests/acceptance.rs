//! The acceptance gate: one test per criterion, each printing a single
//! pass/fail line (visible with `--nocapture`). Every criterion asserts, so
//! an ordinary `cargo test` run enforces the gate even with output captured.

use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dacn::cstr::{
    default_faults, default_modes, derivatives, rk4_step, simulate, steady_state, PlantParams,
    PlantState, SimConfig,
};
use dacn::dataio::{build_task, LabelPolicy, SampleSet, StatsScope, TaskSpec};
use dacn::eval::{accuracy, confusion};
use dacn::hpo::{run_search, GuardedSet, SearchSpace, TrialScore};
use dacn::losses::{batch_losses, cross_entropy, disc_loss, supcon, LossWeights, LOG_FLOOR};
use dacn::model::{
    checkpoint, forward_train, instance_stats, transform, ModelConfig, ModelParams, NoiseDraw,
    Stage,
};
use dacn::pipeline::evaluate_split;
use dacn::trainer::{adversarial_train, pretrain, train_full, TrainConfig};

fn pass(n: usize, name: &str) {
    println!("criterion {n} ({name}): PASS");
}

// ---------------------------------------------------------------------------
// 1. Loss-oracle equivalence: the classification, contrastive, and
//    discriminative losses match brute-force reference implementations
//    within 1e-6 on 100 random micro-batches.
// ---------------------------------------------------------------------------

fn oracle_ce(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= probs[[i, y]].max(LOG_FLOOR).ln();
    }
    total / labels.len() as f64
}

fn oracle_supcon(embeds: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
    // normalize rows first, then the literal double loop
    let rows = embeds.nrows();
    let mut z = embeds.clone();
    for mut r in z.rows_mut() {
        let norm = r.dot(&r).sqrt().max(1e-12);
        r.mapv_inplace(|v| v / norm);
    }
    let mut total = 0.0;
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..rows {
            if k != i {
                denom += (z.row(i).dot(&z.row(k)) / tau).exp();
            }
        }
        for &j in &positives {
            let num = (z.row(i).dot(&z.row(j)) / tau).exp();
            total -= (num / denom).ln() / (rows - 1) as f64;
        }
    }
    total
}

fn oracle_disc(d: &Array1<f64>, n_seen: usize) -> f64 {
    let mut total = 0.0;
    for (i, &v) in d.iter().enumerate() {
        if i < n_seen {
            total -= v.max(LOG_FLOOR).ln();
        } else {
            total -= (1.0 - v).max(LOG_FLOOR).ln();
        }
    }
    total
}

#[test]
fn criterion_1_loss_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let classes = rng.gen_range(2..=4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();

        // classification loss on a random softmax-ish matrix
        let mut probs = Array2::from_shape_fn((n, classes), |_| rng.gen_range(0.01..1.0));
        for mut r in probs.rows_mut() {
            let s = r.sum();
            r.mapv_inplace(|v| v / s);
        }
        let (ce, _) = cross_entropy(&probs, &labels).unwrap();
        assert!((ce - oracle_ce(&probs, &labels)).abs() < 1e-6);

        // contrastive loss on random embeddings
        let embeds = Array2::from_shape_fn((n, 5), |_| rng.gen_range(-1.0..1.0));
        let tau = rng.gen_range(0.1..1.0);
        let (sc, _) = supcon(&embeds, &labels, tau, true).unwrap();
        assert!(
            (sc - oracle_supcon(&embeds, &labels, tau)).abs() < 1e-6,
            "supcon mismatch"
        );

        // discriminative loss on random sigmoid outputs
        let d = Array1::from_shape_fn(2 * n, |_| rng.gen_range(0.01..0.99));
        let (dl, _) = disc_loss(&d, n).unwrap();
        assert!((dl - oracle_disc(&d, n)).abs() < 1e-8);
    }

    // pinned composite arithmetic: unit component losses under the quoted
    // weight vector
    let w = LossWeights {
        lambda1: 0.68,
        lambda2: 0.35,
        lambda3: 7.75,
        lambda4: 6.88,
        ..LossWeights::default()
    };
    let l1 = w.lambda1 * 1.0 + w.lambda2 * 1.0 + w.lambda3 * 1.0 - w.lambda4 * 1.0;
    assert!((l1 - 1.90).abs() < 1e-12);

    assert!(t0.elapsed().as_secs() < 10, "criterion 1 exceeded 10 s");
    pass(1, "loss-oracle equivalence");
}

// ---------------------------------------------------------------------------
// 2. Gradient contract: finite differences confirm each objective's
//    gradient on its own module groups within 1e-4 relative, with exact
//    zeros on the groups an objective must not touch.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_contract() {
    use dacn::model::{backward, BackwardPlan, ModuleGroup};
    let t0 = Instant::now();
    let cfg = ModelConfig::tiny(2, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    assert!(params.count_params(Stage::Training) <= 500);
    let x = Array3::from_shape_fn((4, 2, 8), |_| rng.gen_range(-1.0..1.0));
    let labels = vec![0usize, 1, 0, 1];
    let w = LossWeights {
        lambda1: 0.7,
        lambda2: 0.5,
        lambda3: 1.1,
        lambda4: 0.9,
        tau: 0.5,
        ..LossWeights::default()
    };

    let objective = |p: &ModelParams, which: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let fwd = forward_train(p, &x, &mut rng).unwrap();
        let (bl, _) = batch_losses(&fwd.heads.probs, &fwd.heads.g, &fwd.heads.d, &labels, &w)
            .unwrap();
        [bl.l1, bl.l2, bl.l3][which]
    };

    let mut rng99 = ChaCha8Rng::seed_from_u64(99);
    let fwd = forward_train(&params, &x, &mut rng99).unwrap();
    let (_, terms) =
        batch_losses(&fwd.heads.probs, &fwd.heads.g, &fwd.heads.d, &labels, &w).unwrap();
    let plans = [
        (
            terms.combine(w.lambda1, w.lambda2, w.lambda3, -w.lambda4),
            BackwardPlan::feature_path(),
            vec![ModuleGroup::Extractor, ModuleGroup::Invariant, ModuleGroup::Classifier],
        ),
        (
            terms.combine(0.0, 0.0, 0.0, 1.0),
            BackwardPlan::discriminator_only(),
            vec![ModuleGroup::Discriminator],
        ),
        (
            terms.combine(0.0, w.lambda1, w.lambda3, w.lambda4),
            BackwardPlan::transformer_only(),
            vec![ModuleGroup::Transformer],
        ),
    ];

    let eps = 1e-5;
    for (which, (up, plan, live)) in plans.iter().enumerate() {
        let grads = backward(&params, &fwd, up, plan).unwrap();
        let mut slices: Vec<(ModuleGroup, Vec<f64>)> = Vec::new();
        grads.visit(|g, s| slices.push((g, s.to_vec())));
        for (ti, (group, slice)) in slices.iter().enumerate() {
            if !live.contains(group) {
                assert!(
                    slice.iter().all(|&g| g == 0.0),
                    "objective {which}: {group:?} must stay exactly zero"
                );
                continue;
            }
            for pi in 0..slice.len() {
                let perturbed = |delta: f64| {
                    let mut p = params.clone();
                    let mut idx = 0;
                    p.visit_mut(|_, s| {
                        if idx == ti {
                            s[pi] += delta;
                        }
                        idx += 1;
                    });
                    objective(&p, which)
                };
                let fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps);
                let an = slice[pi];
                let denom = fd.abs().max(an.abs()).max(1e-3);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "objective {which} {group:?}[{pi}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }
    assert!(t0.elapsed().as_secs() < 60, "criterion 2 exceeded 60 s");
    pass(2, "gradient contract");
}

// ---------------------------------------------------------------------------
// 3. Shape pipeline and parameter count.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_shape_pipeline_and_param_count() {
    let cfg = ModelConfig::cstr_default(13);
    let params = ModelParams::zeros(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array3::from_shape_fn((2, 7, 64), |_| rng.gen_range(-1.0..1.0));
    let fwd = forward_train(&params, &x, &mut rng).unwrap();
    // feature map: 128 channels over 64/4 = 16 steps, flattened to 2048
    assert_eq!(fwd.extract.f.dim(), (2, 128, 16));
    assert_eq!(cfg.flat_dim(), 2048);
    // heads over [seen; pseudo]: 256-dim embeddings, 13 class probs, scalars
    assert_eq!(fwd.heads.g.dim(), (4, 256));
    assert_eq!(fwd.heads.probs.dim(), (4, 13));
    assert_eq!(fwd.heads.d.len(), 4);
    assert_eq!(cfg.disc_dim(), 256 * 13);

    // the quoted inference count of 630,413 corresponds to 10 measured
    // variables with 13 classes; 7 variables differ only through the first
    // convolution (3 x 128 x 3 = 1,152 weights)
    let v10 = ModelParams::zeros(&ModelConfig { v: 10, ..cfg.clone() }).unwrap();
    assert_eq!(v10.count_params(Stage::Inference), 630_413);
    let v7 = params.count_params(Stage::Inference);
    assert_eq!(v7, 630_413 - 1_152);
    assert!((v7 as f64 - 6.3e5).abs() / 6.3e5 < 0.01);
    pass(3, "shape pipeline and parameter count");
}

// ---------------------------------------------------------------------------
// 4. Transformer closed form.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_transformer_closed_form() {
    // noise_dim = channels with identity h1/h2 lets the noise rows carry
    // the forced per-sample outputs directly
    let cfg = ModelConfig {
        channels: 4,
        noise_dim: 4,
        dropout: 0.0,
        ..ModelConfig::tiny(2, 8, 3)
    };
    let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    // init gives h1/h2 identity weights and zero bias already; rely on that
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = Array3::from_shape_fn((3, 4, 8), |_| rng.gen_range(-2.0..2.0));
    let (mu, sigma, floored) = instance_stats(&f);
    assert!(floored.iter().all(|&b| !b), "random features must not floor");

    // forced outputs (sigma_i, mu_i): the transform reproduces f exactly
    let tr = transform(&params, &f, NoiseDraw { n1: sigma.clone(), n2: mu.clone() });
    let max_err = (&tr.fprime - &f)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_err < 1e-12, "identity reconstruction err {max_err}");

    // forced outputs (1, 0): per-channel instance mean 0, std 1
    let ones = Array2::ones(mu.raw_dim());
    let zeros = Array2::zeros(mu.raw_dim());
    let tr = transform(&params, &f, NoiseDraw { n1: ones, n2: zeros });
    let (mu2, sigma2, _) = instance_stats(&tr.fprime);
    for v in mu2.iter() {
        assert!(v.abs() < 1e-5);
    }
    for v in sigma2.iter() {
        assert!((v - 1.0).abs() < 1e-5);
    }
    pass(4, "transformer closed form");
}

// ---------------------------------------------------------------------------
// 5. Simulator physics.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_simulator_physics() {
    // steady-state residual
    let params = PlantParams::default();
    let op = steady_state(&params, 402.0).unwrap();
    let state = PlantState { c: op.c, t_reactor: op.t_reactor, t_coolant: op.t_coolant, t: 0.0 };
    let dy = derivatives(&state, op.qc, &params).unwrap();
    for v in dy {
        assert!(v.abs() < 1e-8, "steady-state residual {v}");
    }

    // RK4 shows 4th-order convergence on y' = -y, y(0) = 1
    let exact = (-1.0f64).exp();
    let integrate = |h: f64| {
        let mut y = [1.0f64];
        let mut t = 0.0;
        let steps = (1.0 / h).round() as usize;
        for _ in 0..steps {
            y = rk4_step(&mut |_, y: &[f64; 1]| [-y[0]], t, &y, h);
            t += h;
        }
        (y[0] - exact).abs()
    };
    let e1 = integrate(0.1);
    let e2 = integrate(0.05);
    let order = (e1 / e2).log2();
    assert!(order > 3.8 && order < 4.3, "observed order {order}");

    // fault causality: every fault matches the healthy run bit-for-bit
    // before the onset when simulated from the same seed
    let sim = SimConfig::default();
    let mode = &default_modes()[0];
    let faults = default_faults(sim.onset, &sim.noise_std);
    let healthy = simulate(mode, &faults[0], &sim, 42).unwrap();
    for fault in &faults[1..] {
        let run = simulate(mode, fault, &sim, 42).unwrap();
        let mut diverged_later = false;
        for (row, &t) in run.times.iter().enumerate() {
            if t < sim.onset {
                for ch in 0..run.n_channels() {
                    assert_eq!(
                        run.channels[[row, ch]],
                        healthy.channels[[row, ch]],
                        "fault {} differs from healthy before onset (t = {t})",
                        fault.id
                    );
                }
            } else if run.channels.row(row) != healthy.channels.row(row) {
                diverged_later = true;
            }
        }
        assert!(diverged_later, "fault {} never affected the record", fault.id);
    }
    pass(5, "simulator physics");
}

// ---------------------------------------------------------------------------
// 6. Desk-scale experiment: 200 samples/class, 3 tasks, 5 seeds,
//    worst-of-5; full training beats or ties the pretrain-only variant on
//    unseen modes for at least 2 of 3 tasks, and holds >= 0.90 seen-mode
//    accuracy everywhere. Budget: 45 min.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_desk_scale_experiment() {
    let t0 = Instant::now();
    let sim = SimConfig::default();
    let series = dacn::cstr::generate_series(
        &default_modes(),
        &default_faults(sim.onset, &sim.noise_std),
        &sim,
    )
    .unwrap();

    let tasks: [(&str, [&str; 2]); 3] = [
        ("M1", ["M2", "M3"]),
        ("M2", ["M1", "M3"]),
        ("M3", ["M1", "M2"]),
    ];
    let mut tasks_won = 0;
    for (source, targets) in tasks {
        let mut full_t1 = Vec::new();
        let mut full_t2 = Vec::new();
        let mut a1_t2 = Vec::new();
        for seed in 0..5u64 {
            let spec = TaskSpec {
                source_mode: source.into(),
                target_modes: targets.iter().map(|s| s.to_string()).collect(),
                k: 64,
                split_ratio: 0.8,
                seed,
                samples_per_class: Some(200),
                onset: sim.onset,
                label_policy: LabelPolicy::WindowEnd,
                stats_scope: StatsScope::OwnMode,
                keep_preonset_normal: false,
            };
            let bundle = build_task(&spec, &series).unwrap();
            let model_cfg = ModelConfig::cstr_default(bundle.n_classes);
            let cfg = TrainConfig {
                epochs_pretrain: 6,
                epochs_train: 10,
                seed,
                ..TrainConfig::default()
            };
            let mut params =
                ModelParams::init(&model_cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            pretrain(&mut params, &bundle.train, &cfg).unwrap();
            // the pretrain-only variant is exactly this snapshot
            let a1 = evaluate_split(&params, &bundle.test2, bundle.n_classes).unwrap();
            adversarial_train(&mut params, &bundle.train, &cfg).unwrap();
            let t1 = evaluate_split(&params, &bundle.test1, bundle.n_classes).unwrap();
            let t2 = evaluate_split(&params, &bundle.test2, bundle.n_classes).unwrap();
            full_t1.push(t1.metrics.accuracy);
            full_t2.push(t2.metrics.accuracy);
            a1_t2.push(a1.metrics.accuracy);
        }
        let worst = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let (w1, w2, wa) = (worst(&full_t1), worst(&full_t2), worst(&a1_t2));
        println!(
            "task {source} -> {targets:?}: worst-of-5 test1 {w1:.4}, test2 {w2:.4} (pretrain-only {wa:.4})"
        );
        assert!(w1 >= 0.90, "task {source}: seen-mode worst-of-5 {w1:.4} < 0.90");
        if w2 >= wa {
            tasks_won += 1;
        }
    }
    assert!(
        tasks_won >= 2,
        "full training beat pretrain-only on only {tasks_won}/3 tasks"
    );
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    println!("desk-scale experiment took {mins:.1} min");
    assert!(mins < 45.0, "exceeded the 45 min budget");
    pass(6, "desk-scale experiment");
}

// ---------------------------------------------------------------------------
// 7. Metrics identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_metrics_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let classes = 13;
    let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let m = confusion(&truth, &pred, classes).unwrap();
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    assert_eq!(accuracy(&m), correct as f64 / n as f64);
    for c in 0..classes {
        let tp = m[[c, c]];
        let fn_ = m.row(c).sum() - tp;
        let fp = m.column(c).sum() - tp;
        let tn = n - tp - fn_ - fp;
        assert_eq!(tp + fn_ + fp + tn, n);
    }
    pass(7, "metrics identities");
}

// ---------------------------------------------------------------------------
// 8. Reproducibility: identical config and seed give identical histories
//    and bit-identical checkpoints across two executions.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_reproducibility() {
    let sim = SimConfig { duration: 400.0, onset: 150.0, ..SimConfig::default() };
    let series = dacn::cstr::generate_series(
        &default_modes()[..2],
        &default_faults(sim.onset, &sim.noise_std)[..3],
        &sim,
    )
    .unwrap();
    let spec = TaskSpec {
        source_mode: "M1".into(),
        target_modes: vec!["M2".into()],
        k: 32,
        split_ratio: 0.8,
        seed: 9,
        samples_per_class: Some(40),
        onset: sim.onset,
        label_policy: LabelPolicy::WindowEnd,
        stats_scope: StatsScope::OwnMode,
        keep_preonset_normal: false,
    };
    let bundle = build_task(&spec, &series).unwrap();
    let model_cfg = ModelConfig {
        k: 32,
        channels: 8,
        noise_dim: 8,
        g_dim: 16,
        ..ModelConfig::cstr_default(bundle.n_classes)
    };
    let cfg = TrainConfig {
        epochs_pretrain: 1,
        epochs_train: 2,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut blobs = Vec::new();
    let mut histories = Vec::new();
    for run in 0..2 {
        let outcome = train_full(&model_cfg, &bundle.train, &cfg).unwrap();
        let path = dir.path().join(format!("{run}.ckpt"));
        checkpoint::save(&outcome.params, "acceptance", &path).unwrap();
        blobs.push(std::fs::read(&path).unwrap());
        // wall-clock timing is the one legitimately nondeterministic field
        let mut history = outcome.history;
        for r in &mut history {
            r.wall_s = 0.0;
        }
        histories.push(serde_json::to_string(&history).unwrap());
    }
    assert_eq!(blobs[0], blobs[1], "checkpoints differ between reruns");
    assert_eq!(histories[0], histories[1], "run records differ between reruns");
    pass(8, "reproducibility");
}

// ---------------------------------------------------------------------------
// 9. HPO hygiene: the unseen-mode split is never read during search, and
//    the returned configuration maximizes the logged selection criterion.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_hpo_hygiene() {
    let n = 24;
    let make = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleSet {
            x: Array3::from_shape_fn((n, 2, 8), |_| rng.gen_range(-1.0..1.0)),
            labels: (0..n).map(|i| i % 2).collect(),
            mode_ids: vec!["M1".into(); n],
        }
    };
    let train_set = make(0);
    let guard = GuardedSet::new(make(1));

    let model_cfg = ModelConfig::tiny(2, 8, 2);
    let space = SearchSpace { budget: 4, lambda_max: 1.0, ..SearchSpace::default() };
    let result = run_search(&space, |trial| {
        let cfg = TrainConfig {
            epochs_pretrain: 1,
            epochs_train: 1,
            batch_size: 8,
            lr: trial.lr,
            lr_adversarial: None,
            weights: trial.to_weights(&LossWeights::default()),
            ..TrainConfig::default()
        };
        let outcome = train_full(&model_cfg, &train_set, &cfg)?;
        let pseudo_acc = outcome
            .history
            .iter()
            .rev()
            .find(|r| r.stage == "train")
            .map(|r| r.pseudo_acc)
            .unwrap_or(f64::NAN);
        Ok(TrialScore { pseudo_acc, test1_acc: 0.0, wall_s: 0.0 })
    });

    assert_eq!(guard.accesses(), 0, "search read the unseen-mode split");
    let best = result.best.as_ref().expect("at least one successful trial");
    let best_score = best.score.unwrap().pseudo_acc;
    for r in &result.trials {
        if let Some(s) = r.score {
            assert!(
                best_score >= s.pseudo_acc,
                "returned config does not maximize the logged criterion"
            );
        }
    }
    pass(9, "hpo hygiene");
}
