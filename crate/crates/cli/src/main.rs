//! `openset`: generate a synthetic benchmark, train ensembles under one of
//! four open-set strategies, evaluate them and compare all four side by
//! side. Every command writes its fully resolved configuration to
//! `resolved_config.toml` in the output directory; feeding that file back
//! with `--config` reproduces the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use openset::experiment::{
    self, build_benchmark, compare, create_dir, evaluate_models, generate, load_ensemble, load_manifest, save_ensemble,
    test_set, train_strategy, write_access_log, write_config_echo, write_evaluation, write_sweep, ExperimentError,
    HygieneAudit, Overrides, RunConfig,
};
use openset::losses::LossStrategy;
use openset::spectra::ReadLog;
use openset::training::{smoothed_increases, EpochLog};

/// Window of the trailing mean used to flag non-decreasing training loss.
const LOSS_WINDOW: usize = 3;

#[derive(Parser)]
#[command(name = "openset", version, about = "Open-set classification of 1D spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark (per-class CSV files and manifest.toml).
    Generate(Common),
    /// Train an ensemble for one strategy and save its checkpoints.
    Train(Common),
    /// Evaluate saved checkpoints on the test split.
    Evaluate(Common),
    /// Sweep the rejection cutoff and select the operating point.
    Sweep(Common),
    /// Train and evaluate all four strategies and tabulate them.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to everything it omits.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Seed for data generation, initialization and shuffling.
    #[arg(short, long)]
    seed: Option<u64>,
    /// softmax_threshold, background_class, entropic_open_set or objectosphere.
    #[arg(long)]
    strategy: Option<LossStrategy>,
    /// Dataset manifest.
    #[arg(short, long)]
    manifest: Option<PathBuf>,
    /// Directory holding run_<i>.ckpt (default: the output directory).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Do not print per-epoch progress.
    #[arg(short, long)]
    quiet: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ExperimentError> {
        let cwd = std::env::current_dir().map_err(|source| ExperimentError::Io {
            path: PathBuf::from("."),
            source,
        })?;
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig {
                out_dir: cwd.join("out"),
                ..RunConfig::default()
            },
        };
        let overrides = Overrides {
            out_dir: self.out.clone(),
            seed: self.seed,
            strategy: self.strategy,
            manifest: self.manifest.clone(),
            checkpoint_dir: self.checkpoints.clone(),
        };
        base.resolve(&overrides, &cwd)
    }
}

fn progress(quiet: bool, label: &str, run: usize, e: &EpochLog) {
    if !quiet {
        eprintln!(
            "{label}run {run} epoch {:>3}  loss {:.6}  train accuracy {:.4}",
            e.epoch, e.loss, e.train_accuracy
        );
    }
}

fn warn_on_loss(label: &str, runs: &[openset::training::TrainOutcome]) {
    for (i, r) in runs.iter().enumerate() {
        let ups = smoothed_increases(&r.history, LOSS_WINDOW);
        if !ups.is_empty() {
            eprintln!("warning: {label}run {i}: smoothed training loss rose at epoch(s) {ups:?}");
        }
    }
}

fn finish(out: &Path, log: &ReadLog, manifest: &openset::spectra::DatasetManifest) -> Result<(), ExperimentError> {
    write_access_log(out, log)?;
    HygieneAudit::from_log(log, manifest).check()
}

fn cmd_generate(args: &Common) -> Result<(), ExperimentError> {
    let cfg = args.resolve()?;
    let m = generate(&cfg)?;
    println!(
        "wrote {} spectra in {} classes to {}",
        m.records.len(),
        m.classes.len(),
        cfg.out_dir.join("manifest.toml").display()
    );
    Ok(())
}

fn cmd_train(args: &Common) -> Result<(), ExperimentError> {
    let cfg = args.resolve()?;
    write_config_echo(&cfg.out_dir, &cfg)?;
    let manifest = load_manifest(&cfg)?;
    let log = ReadLog::new();
    let ensemble = train_strategy(&manifest, &cfg, &log, &mut |r, e| progress(args.quiet, "", r, e))?;
    save_ensemble(&cfg.out_dir, &ensemble, cfg.seed)?;
    finish(&cfg.out_dir, &log, &manifest)?;
    warn_on_loss("", &ensemble.runs);
    println!(
        "trained {} run(s) of {} (alpha {}, beta {}) into {}",
        ensemble.runs.len(),
        ensemble.spec.strategy,
        ensemble.spec.alpha,
        ensemble.spec.beta,
        cfg.out_dir.display()
    );
    Ok(())
}

fn evaluation(cfg: &RunConfig) -> Result<experiment::StrategyEvaluation, ExperimentError> {
    let manifest = load_manifest(cfg)?;
    let strategy = cfg.train.loss.strategy;
    let classes = manifest.known_count();
    let models = load_ensemble(cfg.checkpoint_dir(), cfg.train.ensemble_size, strategy, classes)?;
    let log = ReadLog::new();
    let test = test_set(&manifest, &log)?;
    let refs: Vec<_> = models.iter().collect();
    let e = evaluate_models(&refs, &test, strategy, classes, cfg.lambda, &cfg.lambda_grid)?;
    finish(&cfg.out_dir, &log, &manifest)?;
    Ok(e)
}

fn cmd_evaluate(args: &Common) -> Result<(), ExperimentError> {
    let cfg = args.resolve()?;
    write_config_echo(&cfg.out_dir, &cfg)?;
    let e = evaluation(&cfg)?;
    write_evaluation(&cfg.out_dir, &e)?;
    print!(
        "{}",
        openset::evaluation::summary_text(&e.report, Some(&e.operating_point), Some(&e.norms))
    );
    Ok(())
}

fn cmd_sweep(args: &Common) -> Result<(), ExperimentError> {
    let cfg = args.resolve()?;
    write_config_echo(&cfg.out_dir, &cfg)?;
    let e = evaluation(&cfg)?;
    write_sweep(&cfg.out_dir, &e)?;
    let op = &e.operating_point;
    println!(
        "selected cutoff {} (inconclusive {:?}, FP on ignored {:?}{})",
        op.lambda(),
        op.row.inconclusive,
        op.row.fp_ignored,
        if op.fp_zero_reached { "" } else { "; zero not reached" }
    );
    Ok(())
}

fn cmd_compare(args: &Common) -> Result<(), ExperimentError> {
    let mut cfg = args.resolve()?;
    create_dir(&cfg.out_dir)?;
    if cfg.manifest.is_none() {
        let data = cfg.out_dir.join("data");
        create_dir(&data)?;
        build_benchmark(&cfg.benchmark, cfg.train_fraction, Some(&data))?;
        cfg.manifest = Some(data.join("manifest.toml"));
    }
    write_config_echo(&cfg.out_dir, &cfg)?;
    let manifest = load_manifest(&cfg)?;
    let log = ReadLog::new();
    let quiet = args.quiet;
    let result = compare(&cfg, &manifest, &log, &mut |s: LossStrategy, r, e| {
        progress(quiet, &format!("{s} "), r, e)
    })?;
    finish(&cfg.out_dir, &log, &manifest)?;
    for e in &result.ensembles {
        warn_on_loss(&format!("{} ", e.spec.strategy), &e.runs);
    }
    print!("{}", experiment::comparison_text(&result.rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    experiment::keep_heap_resident();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("openset: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
