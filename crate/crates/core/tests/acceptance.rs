//! Acceptance run. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero when any fails.
//!
//! The benchmark part trains five ensembles (closed world plus the four
//! open-set strategies) on the default 20/10/10-class synthetic benchmark
//! with a compact network; see `bench_network` and `bench_train`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use openset::evaluation::{fp_at_inconclusive, EvalReport, SweepRow};
use openset::experiment::{
    self, build_benchmark, evaluate_models, test_set, train_strategy, validation_set, write_evaluation, HygieneAudit,
    RunConfig, StrategyEvaluation, TrainedEnsemble,
};
use openset::losses::{
    batch_loss, cross_entropy, entropic_open_set_loss, objectosphere_loss, LossSpec, LossStrategy, Target,
};
use openset::network::{Mode, Model, NetworkConfig};
use openset::spectra::{BenchmarkSpec, ClassRole, DatasetManifest, ReadLog, WavenumberGrid};
use openset::tensor::{grad_check_many, Graph, Tensor, TensorError, Var};
use openset::training::{history_csv, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Criterion 1: largest accepted `|analytic - numeric| / max(1, |analytic|)`.
const GRAD_TOL: f64 = 1e-4;
/// Central-difference step.
const GRAD_EPS: f64 = 1e-6;
/// Criterion 1 runtime budget, seconds.
const GRAD_BUDGET_S: f64 = 60.0;
/// Criterion 2: tolerance of the uniform-point identity.
const LN_C_TOL: f64 = 1e-10;
/// ln 20.
const LN_20: f64 = 2.995_732_273_553_991;
/// Criterion 4.
const PARTITION_TOL: f64 = 1e-12;
/// Criterion 5(a).
const CLOSED_WORLD_MIN_ACCURACY: f64 = 0.99;
const SEED: u64 = 20;

struct Line {
    id: &'static str,
    title: &'static str,
    pass: bool,
}

fn report(lines: &mut Vec<Line>, id: &'static str, title: &'static str, pass: bool, detail: String) {
    println!("{} {id} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { id, title, pass });
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Random tensor with every entry at least `gap` away from zero, so ReLU
/// kinks stay out of the finite-difference stencil.
fn randn_away(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    randn(rng, shape).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape).map(|v| 0.5 + v.abs())
}

/// `Σ w ⊙ v` with fixed random weights, so every output coordinate
/// contributes its own direction to the gradient.
fn weighted(g: &mut Graph, v: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(v).shape().to_vec();
    let w = g.constant(randn(&mut rng, &shape));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

type Check = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>>);

fn primitive_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    vec![
        ("add", vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted(g, y, 1)
        })),
        ("mul", vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted(g, y, 2)
        })),
        ("scale", vec![randn(rng, &[5])], Box::new(|g, v| {
            let y = g.scale(v[0], -1.7);
            weighted(g, y, 3)
        })),
        ("add_scalar", vec![randn(rng, &[5])], Box::new(|g, v| {
            let y = g.add_scalar(v[0], 0.3);
            let y = g.square(y);
            weighted(g, y, 4)
        })),
        ("matmul", vec![randn(rng, &[3, 4]), randn(rng, &[4, 2])], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted(g, y, 5)
        })),
        ("transpose", vec![randn(rng, &[3, 4])], Box::new(|g, v| {
            let y = g.transpose(v[0])?;
            weighted(g, y, 6)
        })),
        ("conv1d k3 s1 p1", vec![randn(rng, &[2, 3, 9]), randn(rng, &[4, 3, 3])], Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], 1, 1)?;
            weighted(g, y, 7)
        })),
        ("conv1d k3 s2 p0", vec![randn(rng, &[2, 2, 10]), randn(rng, &[3, 2, 3])], Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], 2, 0)?;
            weighted(g, y, 8)
        })),
        ("conv1d k5 s4 p2", vec![randn(rng, &[2, 1, 13]), randn(rng, &[2, 1, 5])], Box::new(|g, v| {
            let y = g.conv1d(v[0], v[1], 4, 2)?;
            weighted(g, y, 9)
        })),
        ("relu", vec![randn_away(rng, &[4, 5], 0.05)], Box::new(|g, v| {
            let y = g.relu(v[0]);
            weighted(g, y, 10)
        })),
        ("global_average_pool", vec![randn(rng, &[2, 3, 5])], Box::new(|g, v| {
            let y = g.global_average_pool(v[0])?;
            weighted(g, y, 11)
        })),
        ("batch_norm_train [N,C,L]", vec![randn(rng, &[4, 3, 5]), randn(rng, &[3]), randn(rng, &[3])], Box::new(|g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted(g, y, 12)
        })),
        ("batch_norm_train [N,C]", vec![randn(rng, &[6, 3]), randn(rng, &[3]), randn(rng, &[3])], Box::new(|g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted(g, y, 13)
        })),
        ("batch_norm_eval", vec![randn(rng, &[3, 2, 4]), randn(rng, &[2]), randn(rng, &[2])], Box::new(|g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.5, 0.7], 1e-5)?;
            weighted(g, y, 14)
        })),
        ("softmax", vec![randn(rng, &[3, 5])], Box::new(|g, v| {
            let y = g.softmax(v[0])?;
            weighted(g, y, 15)
        })),
        ("log_softmax", vec![randn(rng, &[3, 5])], Box::new(|g, v| {
            let y = g.log_softmax(v[0])?;
            weighted(g, y, 16)
        })),
        ("log", vec![positive(rng, &[6])], Box::new(|g, v| {
            let y = g.log(v[0]);
            weighted(g, y, 17)
        })),
        ("sum", vec![randn(rng, &[2, 3])], Box::new(|g, v| {
            let y = g.square(v[0]);
            Ok(g.sum(y))
        })),
        ("mean", vec![randn(rng, &[2, 3])], Box::new(|g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        })),
        ("row_sum", vec![randn(rng, &[3, 4])], Box::new(|g, v| {
            let y = g.row_sum(v[0])?;
            let y = g.square(y);
            weighted(g, y, 18)
        })),
        ("square", vec![randn(rng, &[5])], Box::new(|g, v| {
            let y = g.square(v[0]);
            weighted(g, y, 19)
        })),
        ("vector_norm", vec![randn_away(rng, &[3, 4], 0.1)], Box::new(|g, v| {
            let y = g.vector_norm(v[0])?;
            weighted(g, y, 20)
        })),
    ]
}

/// Network forward pass plus the training loss, differentiated with respect
/// to every parameter and the input.
fn composite_check(strategy: LossStrategy, rng: &mut ChaCha8Rng) -> Result<f64, TensorError> {
    const C: usize = 3;
    let net = NetworkConfig {
        input_len: 12,
        stem_kernel: 3,
        stem_stride: 2,
        widths: vec![3, 4],
        blocks_per_stage: vec![1, 1],
        kernel_size: 3,
        feature_dim: 4,
        output_count: strategy.output_count(C),
    };
    let model = Model::new(net, 7).unwrap();
    let spec = match strategy {
        // Both penalty branches active: small initial features keep the
        // known-sample hinge open.
        LossStrategy::Objectosphere => LossSpec::objectosphere(0.5, 4.0),
        s => LossSpec::new(s),
    };
    let mut targets: Vec<Target> = (0..4).map(|i| Target::known(i % C)).collect();
    if strategy.trains_on_ignored() {
        targets.extend([Target::ignored(), Target::ignored()]);
    }
    let n = targets.len();
    let mut points: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    points.push(randn(rng, &[n, 1, 12]));
    let np = points.len() - 1;
    grad_check_many(
        |g, v| {
            // Shapes are fixed above, so neither call can fail.
            let pass = model.forward_with(g, v[np], &v[..np], Mode::Train).expect("forward pass");
            Ok(batch_loss(g, pass.logits, pass.features, &targets, &spec, C).expect("training loss"))
        },
        &points,
        GRAD_EPS,
    )
}

fn criterion_1(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for (name, points, f) in primitive_checks(&mut rng) {
        match grad_check_many(|g, v| f(g, v), &points, GRAD_EPS) {
            Ok(e) if e < GRAD_TOL => if e >= worst.0 { worst = (e, name) },
            Ok(e) => failures.push(format!("{name} {e:.2e}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    for s in LossStrategy::ALL {
        match composite_check(s, &mut rng) {
            Ok(e) if e < GRAD_TOL => if e >= worst.0 { worst = (e, s.as_str()) },
            Ok(e) => failures.push(format!("composite {s} {e:.2e}")),
            Err(e) => failures.push(format!("composite {s}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < GRAD_BUDGET_S;
    let detail = if failures.is_empty() {
        format!(
            "22 primitive checks + 4 composite losses, max rel err {:.2e} ({}) < {GRAD_TOL:.0e}, {secs:.1} s",
            worst.0, worst.1
        )
    } else {
        format!("failed: {}; {secs:.1} s", failures.join(", "))
    };
    report(lines, "1", "gradient correctness", pass, detail);
}

fn random_scores(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..c).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn batch_loss_value(logits: &Tensor, features: &Tensor, targets: &[Target], spec: &LossSpec, c: usize) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let f = g.constant(features.clone());
    let out = batch_loss(&mut g, l, f, targets, spec, c).unwrap();
    g.value(out).item()
}

fn criterion_2(lines: &mut Vec<Line>) {
    const C: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut problems = Vec::new();

    // Known branch is cross entropy, bit for bit.
    for _ in 0..1000 {
        let s = random_scores(&mut rng, C);
        let l = rng.random_range(0..C);
        if entropic_open_set_loss(&s, ClassRole::Known, Some(l)).unwrap() != cross_entropy(&s, l).unwrap() {
            problems.push("known branch differs from cross entropy".to_string());
            break;
        }
    }
    // Alpha = 0 objectosphere is the entropic loss, for both roles.
    for i in 0..1000 {
        let s = random_scores(&mut rng, C);
        let f: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (role, label) = if i % 2 == 0 { (ClassRole::Known, Some(i % C)) } else { (ClassRole::Ignored, None) };
        let beta = rng.random_range(0.0..10.0);
        if objectosphere_loss(&s, &f, role, label, 0.0, beta).unwrap() != entropic_open_set_loss(&s, role, label).unwrap() {
            problems.push(format!("alpha = 0 objectosphere differs from entropic ({})", role.as_str()));
            break;
        }
    }
    // The same two identities for the batched training loss.
    let n = 12;
    let logits = randn(&mut rng, &[n, C]).scale(3.0);
    let features = randn(&mut rng, &[n, 8]);
    let known: Vec<Target> = (0..n).map(|i| Target::known(i % C)).collect();
    let mixed: Vec<Target> = (0..n).map(|i| if i % 3 == 0 { Target::ignored() } else { Target::known(i % C) }).collect();
    let eos = LossSpec::new(LossStrategy::EntropicOpenSet);
    let sm = LossSpec::new(LossStrategy::SoftmaxThreshold);
    if batch_loss_value(&logits, &features, &known, &eos, C) != batch_loss_value(&logits, &features, &known, &sm, C) {
        problems.push("batched entropic loss on known samples differs from cross entropy".into());
    }
    let oso = LossSpec::objectosphere(0.0, 3.0);
    if batch_loss_value(&logits, &features, &mixed, &oso, C) != batch_loss_value(&logits, &features, &mixed, &eos, C) {
        problems.push("batched alpha = 0 objectosphere differs from entropic".into());
    }
    // Ignored branch at the uniform distribution.
    let uniform = vec![1.0 / C as f64; C];
    let at_uniform = entropic_open_set_loss(&uniform, ClassRole::Ignored, None).unwrap();
    if (at_uniform - LN_20).abs() > LN_C_TOL || (at_uniform - (C as f64).ln()).abs() > LN_C_TOL {
        problems.push(format!("ignored loss at uniform = {at_uniform}, expected ln 20"));
    }
    // The uniform point is the minimum: 1000 flat-Dirichlet simplex points
    // all score higher.
    let mut min_random = f64::INFINITY;
    for _ in 0..1000 {
        let e: Vec<f64> = (0..C).map(|_| Exp1.sample(&mut rng)).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / z).collect();
        min_random = min_random.min(entropic_open_set_loss(&p, ClassRole::Ignored, None).unwrap());
    }
    if !(at_uniform < min_random) {
        problems.push(format!("a random simplex point scored {min_random} <= {at_uniform}"));
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!(
            "known = cross entropy and alpha 0 = entropic (exact, 1000 draws each + batched); \
             ignored at uniform = {at_uniform:.15} (ln 20 within {LN_C_TOL:.0e}); min over 1000 simplex points {min_random:.6}"
        )
    } else {
        problems.join("; ")
    };
    report(lines, "2", "loss identities", pass, detail);
}

/// Violations of FP(Λ) non-increasing / inconclusive(Λ) non-decreasing.
fn monotonicity_violations(name: &str, sweep: &[SweepRow]) -> Vec<String> {
    let mut out = Vec::new();
    for w in sweep.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let down = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => y <= x,
            (None, None) => true,
            _ => false,
        };
        if !down(a.fp_ignored, b.fp_ignored) || !down(a.fp_never_seen, b.fp_never_seen) {
            out.push(format!("{name}: FP rose between {} and {}", a.lambda, b.lambda));
        }
        if !down(b.inconclusive, a.inconclusive) {
            out.push(format!("{name}: inconclusive fell between {} and {}", a.lambda, b.lambda));
        }
    }
    out
}

fn partition_error(r: &EvalReport) -> Option<f64> {
    Some((r.accuracy? + r.wrong? + r.inconclusive? - 1.0).abs())
}

/// Compact network and schedule used for the benchmark: stride-4 stem,
/// one residual block per stage, widths 8/16/32.
fn bench_network() -> NetworkConfig {
    NetworkConfig {
        input_len: 0,
        stem_kernel: 7,
        stem_stride: 4,
        widths: vec![8, 16, 32],
        blocks_per_stage: vec![1, 1, 1],
        kernel_size: 3,
        feature_dim: 32,
        output_count: 0,
    }
}

fn bench_train() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        batch_size: 32,
        learning_rate: 1e-3,
        final_learning_rate: 1e-5,
        ensemble_size: 5,
        seed: SEED,
        ..TrainConfig::default()
    }
}

/// Objectosphere hyperparameters used for the benchmark.
const BENCH_ALPHA: f64 = 0.01;
const BENCH_BETA: f64 = 1.0;

fn bench_config(out_dir: &Path) -> RunConfig {
    RunConfig {
        seed: SEED,
        out_dir: out_dir.to_path_buf(),
        network: bench_network(),
        train: bench_train(),
        benchmark: BenchmarkSpec {
            seed: SEED,
            ..BenchmarkSpec::default()
        },
        ..RunConfig::default()
    }
}

fn never_seen_dirs(m: &DatasetManifest) -> Vec<PathBuf> {
    m.classes
        .iter()
        .filter(|c| c.role == ClassRole::NeverSeen)
        .map(|c| m.base_dir.join(&c.name))
        .collect()
}

/// Moves every never-seen class directory out of reach (or back).
fn hide(dirs: &[PathBuf], hidden: bool) {
    for d in dirs {
        let away = d.with_extension("withheld");
        let (from, to) = if hidden { (d, &away) } else { (&away, d) };
        fs::rename(from, to).unwrap_or_else(|e| panic!("{} -> {}: {e}", from.display(), to.display()));
    }
}

struct Benchmark {
    closed_world: StrategyEvaluation,
    open: Vec<(TrainedEnsemble, StrategyEvaluation)>,
    audit: HygieneAudit,
    hidden_during_training: usize,
    secs: f64,
}

fn run_benchmark(root: &Path) -> Result<Benchmark, experiment::ExperimentError> {
    let start = Instant::now();
    let mut cfg = bench_config(&root.join("out"));
    let data = root.join("data");
    let manifest = build_benchmark(&cfg.benchmark, cfg.train_fraction, Some(&data))?;
    let log = ReadLog::new();

    // Every never-seen file is moved away while anything trains, so a read
    // would fail outright; the read log is audited as well.
    let withheld = never_seen_dirs(&manifest);
    let hidden_files: usize = withheld.iter().map(|d| fs::read_dir(d).unwrap().count()).sum();
    hide(&withheld, true);
    let mut ensembles = Vec::new();
    for strategy in LossStrategy::ALL {
        cfg.train.loss = match strategy {
            LossStrategy::Objectosphere => LossSpec::objectosphere(BENCH_ALPHA, BENCH_BETA),
            s => LossSpec::new(s),
        };
        let t = Instant::now();
        let e = train_strategy(&manifest, &cfg, &log, &mut |_, _| {})?;
        eprintln!("  trained {strategy} in {:.0} s", t.elapsed().as_secs_f64());
        ensembles.push(e);
    }
    // Validation reads (cutoff selection data) must not need 𝒩 either.
    validation_set(&manifest, &log)?;
    hide(&withheld, false);

    let classes = manifest.known_count();
    let test = test_set(&manifest, &log)?;
    let audit = HygieneAudit::from_log(&log, &manifest);
    let mut open = Vec::new();
    for e in ensembles {
        let ev = evaluate_models(&e.models(), &test, e.spec.strategy, classes, None, &cfg.lambda_grid)?;
        write_evaluation(&cfg.out_dir.join(e.spec.strategy.as_str()), &ev)?;
        open.push((e, ev));
    }

    // Closed world: all 40 classes known, re-split, plain cross entropy,
    // accuracy of the ensemble's arg max (cutoff 0).
    let closed = manifest.closed_world()?;
    let mut ccfg = cfg.clone();
    ccfg.train.loss = LossSpec::new(LossStrategy::SoftmaxThreshold);
    let t = Instant::now();
    let ce = train_strategy(&closed, &ccfg, &ReadLog::new(), &mut |_, _| {})?;
    eprintln!("  trained closed world in {:.0} s", t.elapsed().as_secs_f64());
    let ctest = test_set(&closed, &ReadLog::new())?;
    let closed_world = evaluate_models(
        &ce.models(),
        &ctest,
        LossStrategy::SoftmaxThreshold,
        closed.known_count(),
        Some(0.0),
        &cfg.lambda_grid,
    )?;
    Ok(Benchmark {
        closed_world,
        open,
        audit,
        hidden_during_training: hidden_files,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}%", 100.0 * x))
}

fn criteria_3_to_6_and_8(lines: &mut Vec<Line>, b: &Benchmark) {
    // 3. Monotonicity over every evaluated sweep.
    let mut violations = Vec::new();
    let mut sweeps = 0;
    for (e, ev) in &b.open {
        violations.extend(monotonicity_violations(e.spec.strategy.as_str(), &ev.sweep));
        sweeps += 1;
    }
    violations.extend(monotonicity_violations("closed world", &b.closed_world.sweep));
    sweeps += 1;
    let grid = b.closed_world.sweep.len();
    report(
        lines,
        "3",
        "decision-rule monotonicity",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{sweeps} sweeps x {grid} cutoffs: FP non-increasing, inconclusive non-decreasing (exact)")
        } else {
            violations.join("; ")
        },
    );

    // 4. Partition identity on every report.
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut missing = 0;
    let all = b.open.iter().map(|(_, ev)| ev).chain(std::iter::once(&b.closed_world));
    for ev in all {
        for r in ev.grid_reports.iter().chain(std::iter::once(&ev.report)) {
            match partition_error(r) {
                Some(e) => worst = worst.max(e),
                None => missing += 1,
            }
            count += 1;
        }
    }
    report(
        lines,
        "4",
        "partition identity",
        worst <= PARTITION_TOL && missing == 0,
        format!("{count} reports, max |accuracy + wrong + inconclusive - 1| = {worst:.1e} <= {PARTITION_TOL:.0e}"),
    );

    // Comparison table, always shown.
    let pairs: Vec<_> = b.open.iter().map(|(e, ev)| (e.spec, ev)).collect();
    let rows = experiment::comparison_rows(&pairs);
    println!("  benchmark comparison (20 known / 10 ignored / 10 never seen, ensembles of 5, {:.0} s):", b.secs);
    for l in experiment::comparison_text(&rows).lines() {
        println!("    {l}");
    }
    let by = |s: LossStrategy| rows.iter().find(|r| r.strategy == s).expect("all four strategies evaluated");
    let (sm, eos, oso) = (
        by(LossStrategy::SoftmaxThreshold),
        by(LossStrategy::EntropicOpenSet),
        by(LossStrategy::Objectosphere),
    );

    let acc = b.closed_world.report.accuracy;
    report(
        lines,
        "5a",
        "closed-world accuracy",
        acc.is_some_and(|a| a >= CLOSED_WORLD_MIN_ACCURACY),
        format!(
            "ensemble accuracy {} on {} test spectra of 40 classes (>= {:.0}%)",
            pct(acc),
            b.closed_world.report.known_total,
            100.0 * CLOSED_WORLD_MIN_ACCURACY
        ),
    );

    let inc = |r: &experiment::ComparisonRow| r.inconclusive.unwrap_or(f64::INFINITY);
    let ordered = inc(oso) <= inc(eos) && inc(eos) <= inc(sm);
    let zero = sm.fp_zero_reached && eos.fp_zero_reached && oso.fp_zero_reached;
    report(
        lines,
        "5b",
        "inconclusive ordering at FP=0-on-ignored operating points",
        ordered && zero,
        format!(
            "objectosphere {} <= entropic {} <= softmax {} (cutoffs {:.2}/{:.2}/{:.2}{})",
            pct(oso.inconclusive),
            pct(eos.inconclusive),
            pct(sm.inconclusive),
            oso.lambda,
            eos.lambda,
            sm.lambda,
            if zero { "" } else { "; zero FP on ignored not reached by every strategy" }
        ),
    );

    let sm_ev = &b.open.iter().find(|(e, _)| e.spec.strategy == LossStrategy::SoftmaxThreshold).unwrap().1;
    let oso_ev = &b.open.iter().find(|(e, _)| e.spec.strategy == LossStrategy::Objectosphere).unwrap().1;
    let tau = sm_ev.operating_point.row.inconclusive.unwrap_or(0.0);
    let sm_fp = sm_ev.operating_point.row.fp_never_seen;
    let oso_at = fp_at_inconclusive(&oso_ev.sweep, tau);
    let matched = match (oso_at.and_then(|r| r.fp_never_seen), sm_fp) {
        (Some(o), Some(s)) => o <= s,
        _ => false,
    };
    report(
        lines,
        "5c",
        "never-seen FP at matched inconclusive rate",
        matched,
        format!(
            "objectosphere {} (cutoff {}) <= softmax {} at inconclusive <= {}",
            pct(oso_at.and_then(|r| r.fp_never_seen)),
            oso_at.map_or_else(|| "none".into(), |r| format!("{:.2}", r.lambda)),
            pct(sm_fp),
            pct(Some(tau))
        ),
    );

    let k = oso_ev.norms.mean(ClassRole::Known);
    let i = oso_ev.norms.mean(ClassRole::Ignored);
    let n = oso_ev.norms.mean(ClassRole::NeverSeen);
    report(
        lines,
        "6",
        "feature-norm separation",
        matches!((k, i), (Some(k), Some(i)) if k > i),
        format!(
            "objectosphere mean |F|: known {:.4} > ignored {:.4} (never seen {:.4})",
            k.unwrap_or(f64::NAN),
            i.unwrap_or(f64::NAN),
            n.unwrap_or(f64::NAN)
        ),
    );

    let a = &b.audit;
    report(
        lines,
        "8",
        "hygiene audit",
        a.passed() && a.training_reads > 0 && a.evaluation_never_seen > 0,
        format!(
            "{} training and {} validation reads, 0 never seen ({} never-seen files withheld from disk while training, \
             all trainings succeeded); {} of {} evaluation reads are never seen",
            a.training_reads,
            a.validation_reads,
            b.hidden_during_training,
            a.evaluation_never_seen,
            a.evaluation_reads
        ),
    );
}

/// Reduced benchmark for the twice-run reproducibility check; exercises
/// every strategy, alpha/beta tuning and ensembles.
fn repro_config(out_dir: &Path) -> RunConfig {
    RunConfig {
        seed: 7,
        out_dir: out_dir.to_path_buf(),
        tune_grid: vec![(0.01, 1.0), (0.1, 4.0)],
        network: NetworkConfig {
            widths: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            feature_dim: 8,
            ..bench_network()
        },
        train: TrainConfig {
            epochs: 3,
            ensemble_size: 2,
            seed: 7,
            ..bench_train()
        },
        benchmark: BenchmarkSpec {
            known: 4,
            ignored: 2,
            never_seen: 2,
            per_class: 24,
            grid: WavenumberGrid {
                start: 200.0,
                stop: 1800.0,
                bins: 256,
            },
            shared_pool: 8,
            seed: 7,
            ..BenchmarkSpec::default()
        },
        ..RunConfig::default()
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn criterion_7(lines: &mut Vec<Line>, root: &Path) {
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.join(run);
        let cfg = repro_config(&dir.join("out"));
        let result = (|| -> Result<(), experiment::ExperimentError> {
            let manifest = build_benchmark(&cfg.benchmark, cfg.train_fraction, Some(&dir.join("data")))?;
            let c = experiment::compare(&cfg, &manifest, &ReadLog::new(), &mut |_, _, _| {})?;
            for e in &c.ensembles {
                for (i, r) in e.runs.iter().enumerate() {
                    fs::write(
                        cfg.out_dir.join(e.spec.strategy.as_str()).join(format!("history_{i}.csv")),
                        history_csv(&r.history),
                    )
                    .unwrap();
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            report(lines, "7", "reproducibility", false, e.to_string());
            return;
        }
        outputs.push(dir);
    }
    let a = files_under(&outputs[0]);
    let b = files_under(&outputs[1]);
    let rel = |base: &Path, v: &[PathBuf]| v.iter().map(|p| p.strip_prefix(base).unwrap().to_path_buf()).collect::<Vec<_>>();
    let (ra, rb) = (rel(&outputs[0], &a), rel(&outputs[1], &b));
    let mut differing: Vec<String> = Vec::new();
    if ra != rb {
        differing.push("file sets differ".into());
    }
    for (pa, pb) in a.iter().zip(&b) {
        if fs::read(pa).unwrap() != fs::read(pb).unwrap() {
            differing.push(pa.strip_prefix(&outputs[0]).unwrap().display().to_string());
        }
    }
    let logs = ra.iter().filter(|p| p.to_string_lossy().contains("train_log_")).count();
    let evals = ra.iter().filter(|p| p.file_name().is_some_and(|n| n == "metrics.csv")).count();
    report(
        lines,
        "7",
        "reproducibility",
        differing.is_empty() && logs > 0 && evals == 4,
        if differing.is_empty() {
            format!(
                "two runs of the same seed and config: {} files bitwise identical ({logs} training logs, \
                 {evals} metrics.csv, checkpoints, sweeps, confusion tables, tuning table)",
                ra.len()
            )
        } else {
            format!("differ: {}", differing.join(", "))
        },
    );
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture or a filter;
    // a filter that does not match "acceptance" skips the run.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(f.as_str())) {
        return;
    }
    experiment::keep_heap_resident();
    let root = tempfile::tempdir().expect("temporary directory");
    let mut lines = Vec::new();
    criterion_1(&mut lines);
    criterion_2(&mut lines);
    criterion_7(&mut lines, &root.path().join("repro"));
    match run_benchmark(&root.path().join("bench")) {
        Ok(b) => criteria_3_to_6_and_8(&mut lines, &b),
        Err(e) => {
            for (id, title) in [
                ("3", "decision-rule monotonicity"),
                ("4", "partition identity"),
                ("5a", "closed-world accuracy"),
                ("5b", "inconclusive ordering"),
                ("5c", "never-seen FP at matched inconclusive rate"),
                ("6", "feature-norm separation"),
                ("8", "hygiene audit"),
            ] {
                report(&mut lines, id, title, false, format!("benchmark failed: {e}"));
            }
        }
    }
    lines.sort_by(|a, b| a.id.cmp(b.id));
    println!("summary:");
    for l in &lines {
        println!("  {} {} {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.title);
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
