//! End-to-end runs: benchmark generation, ensemble training, evaluation
//! and the four-strategy comparison, with every record read logged so the
//! training stage can be audited for never-seen data.
//!
//! Layout of a run directory:
//!
//! ```text
//! resolved_config.toml   fully resolved configuration
//! access_log.csv         phase,record,class_id,role of every record read
//! run_<i>.ckpt           one checkpoint per ensemble run
//! train_log_<i>.csv      epoch,loss,train_accuracy per run
//! tuning.csv             objectosphere alpha/beta grid, when tuned
//! metrics.csv            EvalReport at the operating cutoff
//! confusion.csv          per true class: accepted labels and rejects
//! sweep.csv              metrics over the cutoff grid
//! histogram.csv          ‖F‖ histograms and means per role
//! features.csv           deep features of run 0 per test sample
//! summary.txt            human-readable report
//! ```

mod config;

pub use config::{Overrides, RunConfig};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evaluation::{
    confusion_csv, evaluate, features_csv, fp_at_inconclusive, histogram_csv, metrics_csv, select_operating_point,
    summary_text, sweep_csv, threshold_sweep, EvalError, EvalReport, FeatureNormStats, OperatingPoint, SampleMeta, SweepRow,
};
use crate::losses::{LossError, LossSpec, LossStrategy};
use crate::network::{Model, NetworkConfig, NetworkError};
use crate::spectra::{
    generate_synthetic, load_samples, split_dataset, write_csv, BenchmarkSpec, ClassEntry, ClassRole, DatasetManifest, Phase,
    ReadLog, Record, RecordSource, Sample, SpectraError, Split, SplitInput, DEFAULT_CUT_BELOW,
};
use crate::training::{
    ensemble_predict, history_csv, train_ensemble, tune_alpha_beta, EnsemblePrediction, EpochLog, TrainConfig, TrainError,
    TrainOutcome, TuneResult,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{0}")]
    Mismatch(String),
    #[error("hygiene audit failed: {0}")]
    Hygiene(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Extra heap kept when glibc trims the top of the heap.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
const HEAP_TOP_PAD: i32 = 256 << 20;

/// Keeps freed heap memory mapped between training steps.
///
/// Every step builds and drops a tape of intermediate tensors. With glibc's
/// default trim threshold the freed top of the heap can be handed back to
/// the kernel after each step and faulted in again on the next one, which
/// can cost as much system time as the arithmetic. Call once at program
/// start; does nothing on other platforms.
pub fn keep_heap_resident() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tuning parameters.
    unsafe {
        libc::mallopt(libc::M_TOP_PAD, HEAP_TOP_PAD);
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Synthesizes the benchmark and splits it. With `dir`, every spectrum is
/// written to `<dir>/<class name>/<NNNN>.csv` and the manifest to
/// `<dir>/manifest.toml`; without it the records are kept inline.
pub fn build_benchmark(spec: &BenchmarkSpec, train_fraction: f64, dir: Option<&Path>) -> Result<DatasetManifest, ExperimentError> {
    let classes = spec.classes()?;
    let mut records = Vec::new();
    let mut split_inputs = Vec::new();
    for class in &classes {
        let spectra = generate_synthetic(&class.profile, spec.per_class, class.sample_seed(spec.seed))?;
        if let Some(d) = dir {
            create_dir(&d.join(&class.name))?;
        }
        for (i, s) in spectra.into_iter().enumerate() {
            let source = match dir {
                Some(d) => {
                    let rel = PathBuf::from(&class.name).join(format!("{i:04}.csv"));
                    write_csv(&d.join(&rel), &s)?;
                    RecordSource::File(rel)
                }
                None => RecordSource::Inline(s),
            };
            records.push(Record {
                source,
                class_id: class.id,
                split: Split::Test,
            });
            split_inputs.push(SplitInput {
                class_id: class.id,
                role: class.role,
            });
        }
    }
    let split = split_dataset(&split_inputs, train_fraction, spec.seed)?;
    for i in split.train {
        records[i].split = Split::Train;
    }
    let manifest = DatasetManifest {
        base_dir: dir.map(Path::to_path_buf).unwrap_or_default(),
        train_fraction,
        seed: spec.seed,
        cut_below: DEFAULT_CUT_BELOW,
        classes: classes
            .iter()
            .map(|c| ClassEntry {
                id: c.id,
                name: c.name.clone(),
                role: c.role,
            })
            .collect(),
        records,
    };
    manifest.validate()?;
    if let Some(d) = dir {
        manifest.save(&d.join("manifest.toml"))?;
    }
    Ok(manifest)
}

/// The `generate` command: writes the benchmark into `out_dir`.
pub fn generate(cfg: &RunConfig) -> Result<DatasetManifest, ExperimentError> {
    create_dir(&cfg.out_dir)?;
    write_config_echo(&cfg.out_dir, cfg)?;
    build_benchmark(&cfg.benchmark, cfg.train_fraction, Some(&cfg.out_dir))
}

/// Loads the configured manifest, switching to the closed-world variant
/// when requested.
pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, ExperimentError> {
    let m = DatasetManifest::load(cfg.manifest_path()?)?;
    Ok(if cfg.closed_world { m.closed_world()? } else { m })
}

/// Training records the strategy uses. Never-seen records are excluded by
/// the selection itself, so their files are never opened.
pub fn training_set(manifest: &DatasetManifest, strategy: LossStrategy, log: &ReadLog) -> Result<Vec<Sample>, ExperimentError> {
    Ok(load_samples(
        manifest,
        |r, role| {
            r.split == Split::Train
                && match role {
                    ClassRole::Known => true,
                    ClassRole::Ignored => strategy.trains_on_ignored(),
                    ClassRole::NeverSeen => false,
                }
        },
        Phase::Training,
        log,
    )?)
}

/// Held-out known and ignored records, used to select cutoffs and tune
/// hyperparameters.
pub fn validation_set(manifest: &DatasetManifest, log: &ReadLog) -> Result<Vec<Sample>, ExperimentError> {
    Ok(load_samples(
        manifest,
        |r, role| r.split == Split::Test && role != ClassRole::NeverSeen,
        Phase::Validation,
        log,
    )?)
}

/// Every held-out record, never-seen classes included.
pub fn test_set(manifest: &DatasetManifest, log: &ReadLog) -> Result<Vec<Sample>, ExperimentError> {
    Ok(load_samples(manifest, |r, _| r.split == Split::Test, Phase::Evaluation, log)?)
}

/// The configured architecture with input length and output count fitted
/// to the data and strategy.
pub fn network_for(template: &NetworkConfig, input_len: usize, strategy: LossStrategy, classes: usize) -> NetworkConfig {
    NetworkConfig {
        input_len,
        output_count: strategy.output_count(classes),
        ..template.clone()
    }
}

/// An ensemble trained under one loss.
#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub spec: LossSpec,
    pub classes: usize,
    pub runs: Vec<TrainOutcome>,
    pub tuning: Option<TuneResult>,
}

impl TrainedEnsemble {
    pub fn models(&self) -> Vec<&Model> {
        self.runs.iter().map(|r| &r.model).collect()
    }
}

/// Trains the configured strategy on `manifest`'s training split. For
/// objectosphere with a nonempty `tune_grid`, alpha and beta are first
/// chosen on the validation records.
pub fn train_strategy(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    log: &ReadLog,
    on_epoch: &mut dyn FnMut(usize, &EpochLog),
) -> Result<TrainedEnsemble, ExperimentError> {
    let mut spec = cfg.train.loss;
    let classes = manifest.known_count();
    let train = training_set(manifest, spec.strategy, log)?;
    let input_len = train
        .first()
        .map(|s| s.input.len())
        .ok_or_else(|| ExperimentError::Config("no training records".into()))?;
    let network = network_for(&cfg.network, input_len, spec.strategy, classes);
    let mut tuning = None;
    if spec.strategy == LossStrategy::Objectosphere && !cfg.tune_grid.is_empty() {
        let validation = validation_set(manifest, log)?;
        let t = tune_alpha_beta(&cfg.tune_grid, &network, &cfg.train, &train, &validation, classes, &cfg.lambda_grid)?;
        spec = LossSpec::objectosphere(t.alpha, t.beta);
        tuning = Some(t);
    }
    let train_cfg = TrainConfig {
        loss: spec,
        ..cfg.train.clone()
    };
    let runs = train_ensemble(&network, &train_cfg, &train, classes, on_epoch)?;
    Ok(TrainedEnsemble {
        spec,
        classes,
        runs,
        tuning,
    })
}

fn checkpoint_meta(spec: &LossSpec, classes: usize, run: usize, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("strategy".to_string(), spec.strategy.to_string()),
        ("alpha".to_string(), spec.alpha.to_string()),
        ("beta".to_string(), spec.beta.to_string()),
        ("known_classes".to_string(), classes.to_string()),
        ("run".to_string(), run.to_string()),
        ("seed".to_string(), seed.to_string()),
    ])
}

/// Writes checkpoints, training logs and the tuning table.
pub fn save_ensemble(dir: &Path, ensemble: &TrainedEnsemble, seed: u64) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    for (i, run) in ensemble.runs.iter().enumerate() {
        let meta = checkpoint_meta(&ensemble.spec, ensemble.classes, i, crate::training::run_seed(seed, i));
        run.model.save(&dir.join(format!("run_{i}.ckpt")), &meta)?;
        write_file(&dir.join(format!("train_log_{i}.csv")), &history_csv(&run.history))?;
    }
    if let Some(t) = &ensemble.tuning {
        write_file(&dir.join("tuning.csv"), &t.to_csv())?;
    }
    Ok(())
}

/// Loads `run_0.ckpt … run_<count-1>.ckpt` and checks that they were
/// trained for `strategy` with `classes` known classes.
pub fn load_ensemble(dir: &Path, count: usize, strategy: LossStrategy, classes: usize) -> Result<Vec<Model>, ExperimentError> {
    let mut models = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(format!("run_{i}.ckpt"));
        if !path.is_file() {
            return Err(ExperimentError::MissingCheckpoint(path));
        }
        let (model, meta) = Model::load(&path)?;
        let stored = meta.get("strategy").map(String::as_str).unwrap_or("");
        if stored != strategy.as_str() {
            return Err(ExperimentError::Mismatch(format!(
                "{}: trained for strategy {stored:?}, evaluating {strategy}",
                path.display()
            )));
        }
        let expected = strategy.output_count(classes);
        if model.config().output_count != expected {
            return Err(ExperimentError::Mismatch(format!(
                "{}: network has {} outputs, {strategy} with {classes} known classes needs {expected}",
                path.display(),
                model.config().output_count
            )));
        }
        models.push(model);
    }
    Ok(models)
}

/// Scores, sweep, operating point and report of one ensemble on a test set.
#[derive(Clone, Debug)]
pub struct StrategyEvaluation {
    pub strategy: LossStrategy,
    pub samples: Vec<SampleMeta>,
    pub prediction: EnsemblePrediction,
    pub sweep: Vec<SweepRow>,
    /// Selected from the sweep with the ignored partition only.
    pub operating_point: OperatingPoint,
    /// Report at the configured cutoff, or at the operating point.
    pub report: EvalReport,
    /// Reports at every grid cutoff.
    pub grid_reports: Vec<EvalReport>,
    pub norms: FeatureNormStats,
}

pub fn evaluate_models(
    models: &[&Model],
    test: &[Sample],
    strategy: LossStrategy,
    classes: usize,
    lambda: Option<f64>,
    grid: &[f64],
) -> Result<StrategyEvaluation, ExperimentError> {
    for m in models {
        if let Some(s) = test.iter().find(|s| s.input.len() != m.config().input_len) {
            return Err(ExperimentError::Mismatch(format!(
                "network expects spectra of length {}, manifest record {} has {}",
                m.config().input_len,
                s.id,
                s.input.len()
            )));
        }
    }
    let inputs: Vec<&[f64]> = test.iter().map(|s| s.input.as_slice()).collect();
    let samples: Vec<SampleMeta> = test.iter().map(SampleMeta::from).collect();
    let prediction = ensemble_predict(models, &inputs)?;
    let sweep = threshold_sweep(&prediction.mean, &samples, grid, strategy, classes)?;
    let operating_point = select_operating_point(&sweep)?;
    let at = |l: f64| evaluate(&prediction.mean, &prediction.runs, &samples, l, strategy, classes);
    let report = at(lambda.unwrap_or(operating_point.lambda()))?;
    let grid_reports = sweep.iter().map(|r| at(r.lambda)).collect::<Result<Vec<_>, _>>()?;
    let roles: Vec<ClassRole> = samples.iter().map(|s| s.role).collect();
    let norms = FeatureNormStats::compute(&prediction.mean_feature_norms(), &roles);
    Ok(StrategyEvaluation {
        strategy,
        samples,
        prediction,
        sweep,
        operating_point,
        report,
        grid_reports,
        norms,
    })
}

pub fn write_evaluation(dir: &Path, e: &StrategyEvaluation) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&e.report))?;
    write_file(&dir.join("confusion.csv"), &confusion_csv(&e.report))?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(&e.sweep))?;
    write_file(&dir.join("histogram.csv"), &histogram_csv(&e.norms))?;
    write_file(&dir.join("features.csv"), &features_csv(&e.samples, &e.prediction.features[0]))?;
    write_file(
        &dir.join("summary.txt"),
        &summary_text(&e.report, Some(&e.operating_point), Some(&e.norms)),
    )?;
    Ok(())
}

pub fn write_sweep(dir: &Path, e: &StrategyEvaluation) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(&e.sweep))?;
    let op = &e.operating_point;
    write_file(
        &dir.join("operating_point.txt"),
        &format!("lambda = {}\nfp_zero_reached = {}\n", op.lambda(), op.fp_zero_reached),
    )
}

pub fn write_config_echo(dir: &Path, cfg: &RunConfig) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    write_file(&dir.join("resolved_config.toml"), &cfg.to_toml_string())
}

pub fn write_access_log(dir: &Path, log: &ReadLog) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    let mut s = String::from("phase,record,class_id,role\n");
    for e in log.events() {
        let phase = match e.phase {
            Phase::Training => "training",
            Phase::Validation => "validation",
            Phase::Evaluation => "evaluation",
        };
        writeln!(s, "{phase},{},{},{}", e.record, e.class_id, e.role.as_str()).unwrap();
    }
    write_file(&dir.join("access_log.csv"), &s)
}

/// Counts of records read per phase, split by never-seen or not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HygieneAudit {
    pub training_reads: usize,
    pub training_never_seen: usize,
    pub validation_reads: usize,
    pub validation_never_seen: usize,
    pub evaluation_reads: usize,
    pub evaluation_never_seen: usize,
}

impl HygieneAudit {
    /// Checks every logged read against the roles in `manifest` (not the
    /// roles recorded in the log).
    pub fn from_log(log: &ReadLog, manifest: &DatasetManifest) -> Self {
        let mut a = Self::default();
        for e in log.events() {
            let never = manifest.role_of(manifest.records[e.record].class_id) == Some(ClassRole::NeverSeen);
            let (reads, nev) = match e.phase {
                Phase::Training => (&mut a.training_reads, &mut a.training_never_seen),
                Phase::Validation => (&mut a.validation_reads, &mut a.validation_never_seen),
                Phase::Evaluation => (&mut a.evaluation_reads, &mut a.evaluation_never_seen),
            };
            *reads += 1;
            *nev += usize::from(never);
        }
        a
    }

    /// No never-seen record was read before the evaluation phase.
    pub fn passed(&self) -> bool {
        self.training_never_seen == 0 && self.validation_never_seen == 0
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.passed() {
            Ok(())
        } else {
            Err(ExperimentError::Hygiene(format!(
                "{} never-seen record(s) read during training, {} during validation",
                self.training_never_seen, self.validation_never_seen
            )))
        }
    }
}

/// One strategy at its operating point, side by side with the others.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub strategy: LossStrategy,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub fp_zero_reached: bool,
    pub accuracy: Option<f64>,
    pub wrong: Option<f64>,
    pub inconclusive: Option<f64>,
    pub fp_ignored: Option<f64>,
    pub fp_never_seen: Option<f64>,
    /// Lowest FP on 𝒩 over cutoffs whose inconclusive rate does not exceed
    /// softmax thresholding's at its operating point.
    pub matched_fp_never_seen: Option<f64>,
    pub matched_lambda: Option<f64>,
    pub mean_norm_known: Option<f64>,
    pub mean_norm_ignored: Option<f64>,
    pub mean_norm_never_seen: Option<f64>,
}

/// Builds comparison rows; the matched-inconclusive columns use the
/// softmax-threshold evaluation as reference when present.
pub fn comparison_rows(evals: &[(LossSpec, &StrategyEvaluation)]) -> Vec<ComparisonRow> {
    let reference = evals
        .iter()
        .find(|(s, _)| s.strategy == LossStrategy::SoftmaxThreshold)
        .and_then(|(_, e)| e.operating_point.row.inconclusive);
    evals
        .iter()
        .map(|(spec, e)| {
            let r = &e.report;
            let matched = reference.and_then(|t| fp_at_inconclusive(&e.sweep, t));
            ComparisonRow {
                strategy: spec.strategy,
                alpha: spec.alpha,
                beta: spec.beta,
                lambda: r.lambda,
                fp_zero_reached: e.operating_point.fp_zero_reached,
                accuracy: r.accuracy,
                wrong: r.wrong,
                inconclusive: r.inconclusive,
                fp_ignored: r.fp_ignored,
                fp_never_seen: r.fp_never_seen,
                matched_fp_never_seen: matched.and_then(|m| m.fp_never_seen),
                matched_lambda: matched.map(|m| m.lambda),
                mean_norm_known: e.norms.mean(ClassRole::Known),
                mean_norm_ignored: e.norms.mean(ClassRole::Ignored),
                mean_norm_never_seen: e.norms.mean(ClassRole::NeverSeen),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}", 100.0 * x))
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from(
        "strategy,alpha,beta,lambda,fp_zero_reached,accuracy,wrong,inconclusive,fp_ignored,fp_never_seen,\
         matched_lambda,matched_fp_never_seen,mean_norm_known,mean_norm_ignored,mean_norm_never_seen\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.alpha,
            r.beta,
            r.lambda,
            r.fp_zero_reached,
            opt(r.accuracy),
            opt(r.wrong),
            opt(r.inconclusive),
            opt(r.fp_ignored),
            opt(r.fp_never_seen),
            opt(r.matched_lambda),
            opt(r.matched_fp_never_seen),
            opt(r.mean_norm_known),
            opt(r.mean_norm_ignored),
            opt(r.mean_norm_never_seen)
        )
        .unwrap();
    }
    s
}

/// Fixed-width table of the comparison, rates in percent.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<18} {:>6} {:>9} {:>13} {:>9} {:>9} {:>14} {:>8} {:>8}\n",
        "strategy", "cutoff", "accuracy", "inconclusive", "FP(I)", "FP(N)", "FP(N) matched", "|F| K", "|F| I"
    );
    for r in rows {
        let flag = if r.fp_zero_reached { "" } else { "*" };
        writeln!(
            s,
            "{:<18} {:>6} {:>9} {:>13} {:>9} {:>9} {:>14} {:>8.3} {:>8.3}",
            r.strategy.as_str(),
            format!("{:.2}{flag}", r.lambda),
            pct(r.accuracy),
            pct(r.inconclusive),
            pct(r.fp_ignored),
            pct(r.fp_never_seen),
            pct(r.matched_fp_never_seen),
            r.mean_norm_known.unwrap_or(f64::NAN),
            r.mean_norm_ignored.unwrap_or(f64::NAN),
        )
        .unwrap();
    }
    if rows.iter().any(|r| !r.fp_zero_reached) {
        s.push_str("* no cutoff reached zero false positives on ignored classes; lowest rate used\n");
    }
    s
}

/// Result of [`compare`].
#[derive(Clone, Debug)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub ensembles: Vec<TrainedEnsemble>,
    pub evaluations: Vec<StrategyEvaluation>,
    pub audit: HygieneAudit,
}

/// Trains and evaluates all four strategies on the same data, writing each
/// into `out_dir/<strategy>/` and the side-by-side table into
/// `comparison.csv` and `comparison.txt`.
pub fn compare(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    log: &ReadLog,
    on_epoch: &mut dyn FnMut(LossStrategy, usize, &EpochLog),
) -> Result<Comparison, ExperimentError> {
    let classes = manifest.known_count();
    let mut ensembles = Vec::new();
    for strategy in LossStrategy::ALL {
        let mut c = cfg.clone();
        c.train.loss.strategy = strategy;
        let e = train_strategy(manifest, &c, log, &mut |r, l| on_epoch(strategy, r, l))?;
        save_ensemble(&cfg.out_dir.join(strategy.as_str()), &e, cfg.seed)?;
        ensembles.push(e);
    }
    let audit = HygieneAudit::from_log(log, manifest);
    audit.check()?;
    let test = test_set(manifest, log)?;
    let mut evaluations = Vec::new();
    for e in &ensembles {
        let ev = evaluate_models(&e.models(), &test, e.spec.strategy, classes, cfg.lambda, &cfg.lambda_grid)?;
        write_evaluation(&cfg.out_dir.join(e.spec.strategy.as_str()), &ev)?;
        evaluations.push(ev);
    }
    let pairs: Vec<(LossSpec, &StrategyEvaluation)> = ensembles.iter().map(|e| e.spec).zip(&evaluations).collect();
    let rows = comparison_rows(&pairs);
    write_file(&cfg.out_dir.join("comparison.csv"), &comparison_csv(&rows))?;
    write_file(&cfg.out_dir.join("comparison.txt"), &comparison_text(&rows))?;
    Ok(Comparison {
        rows,
        ensembles,
        evaluations,
        audit,
    })
}
