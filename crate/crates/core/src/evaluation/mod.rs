//! Open-set decisions and the metrics built on them.
//!
//! A sample is accepted as its top-scoring known class when that score
//! reaches the cutoff `Λ`, and rejected as unknown otherwise. Everything in
//! this module works on ensemble-averaged score matrices, so it is
//! independent of how the scores were produced.
//!
//! Metric definitions, per role partition of the test set:
//!
//! - known (𝒦): accuracy, wrong rate and inconclusive (rejected) rate; the
//!   three partition the known samples.
//! - ignored (ℐ) and never seen (𝒩): false-positive rate, the fraction
//!   accepted as any known class.
//!
//! A rate over an empty partition is `None`, never zero.

mod report;

pub use report::{
    confusion_csv, features_csv, histogram_csv, metrics_csv, summary_text, sweep_csv, FeatureNormStats, RoleHistogram,
    HISTOGRAM_BINS,
};

use thiserror::Error;

use crate::losses::LossStrategy;
use crate::spectra::{ClassRole, Sample};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cutoff {0} outside [0, 1]")]
    CutoffOutOfRange(f64),
    #[error("cutoff grid must be nonempty and ascending")]
    BadGrid,
    #[error("{strategy} with {classes} known classes expects {expected} scores per sample, got {actual}")]
    ScoreWidth {
        strategy: LossStrategy,
        classes: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{rows} score rows for {samples} samples")]
    RowCount { rows: usize, samples: usize },
    #[error("empty sweep table")]
    EmptyTable,
    #[error("known sample {id} has no label")]
    MissingLabel { id: usize },
}

/// Outcome for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Identified as known class index `0..C`.
    Accept(usize),
    RejectUnknown,
}

/// Metadata of a test sample, without its spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub id: usize,
    pub class_id: u32,
    pub role: ClassRole,
    pub label: Option<usize>,
}

impl From<&Sample> for SampleMeta {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id,
            class_id: s.class_id,
            role: s.role,
            label: s.label,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Candidate class and the score compared against `Λ`, or `None` when the
/// background slot wins outright.
fn candidate(scores: &[f64], strategy: LossStrategy, classes: usize) -> Option<(usize, f64)> {
    let top = argmax(scores);
    match strategy {
        LossStrategy::BackgroundClass => {
            if top == classes {
                return None;
            }
            let known = &scores[..classes];
            let mass: f64 = known.iter().sum();
            let k = argmax(known);
            Some((k, known[k] / mass))
        }
        _ => Some((top, scores[top])),
    }
}

fn check_width(width: usize, strategy: LossStrategy, classes: usize) -> Result<(), EvalError> {
    let expected = strategy.output_count(classes);
    if width != expected {
        return Err(EvalError::ScoreWidth {
            strategy,
            classes,
            expected,
            actual: width,
        });
    }
    Ok(())
}

fn check_cutoff(lambda: f64) -> Result<(), EvalError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EvalError::CutoffOutOfRange(lambda));
    }
    Ok(())
}

/// Accepts the top known class when its score is at least `lambda`.
///
/// With a background class (`C + 1` scores) the sample is rejected when
/// the background slot has the top score; otherwise the cutoff applies to
/// the best known score renormalized over the `C` known slots.
pub fn decide(scores: &[f64], lambda: f64, strategy: LossStrategy, classes: usize) -> Result<Decision, EvalError> {
    check_cutoff(lambda)?;
    check_width(scores.len(), strategy, classes)?;
    Ok(match candidate(scores, strategy, classes) {
        Some((k, s)) if s >= lambda => Decision::Accept(k),
        _ => Decision::RejectUnknown,
    })
}

/// Counts per true class of accepted labels plus rejects.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionTable {
    /// Known-class count `C`; column `C` holds rejects.
    pub classes: usize,
    /// Row order: ascending class id.
    pub rows: Vec<ConfusionRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionRow {
    pub class_id: u32,
    pub role: ClassRole,
    pub counts: Vec<usize>,
}

impl ConfusionTable {
    pub fn row_total(&self, class_id: u32) -> Option<usize> {
        self.rows.iter().find(|r| r.class_id == class_id).map(|r| r.counts.iter().sum())
    }
}

/// Metrics of one ensemble at one cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub strategy: LossStrategy,
    pub lambda: f64,
    pub known_total: usize,
    pub ignored_total: usize,
    pub never_seen_total: usize,
    pub accuracy: Option<f64>,
    pub wrong: Option<f64>,
    pub inconclusive: Option<f64>,
    pub fp_ignored: Option<f64>,
    pub fp_never_seen: Option<f64>,
    /// Accuracy of every individual run at the same cutoff.
    pub run_accuracy: Vec<Option<f64>>,
    pub confusion: ConfusionTable,
}

fn rate(count: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| count as f64 / total as f64)
}

#[derive(Default)]
struct Tally {
    known: usize,
    correct: usize,
    wrong: usize,
    rejected: usize,
    ignored: usize,
    ignored_accepted: usize,
    never_seen: usize,
    never_seen_accepted: usize,
}

impl Tally {
    fn add(&mut self, meta: &SampleMeta, decision: Decision) -> Result<(), EvalError> {
        let accepted = matches!(decision, Decision::Accept(_));
        match meta.role {
            ClassRole::Known => {
                let label = meta.label.ok_or(EvalError::MissingLabel { id: meta.id })?;
                self.known += 1;
                match decision {
                    Decision::Accept(k) if k == label => self.correct += 1,
                    Decision::Accept(_) => self.wrong += 1,
                    Decision::RejectUnknown => self.rejected += 1,
                }
            }
            ClassRole::Ignored => {
                self.ignored += 1;
                self.ignored_accepted += usize::from(accepted);
            }
            ClassRole::NeverSeen => {
                self.never_seen += 1;
                self.never_seen_accepted += usize::from(accepted);
            }
        }
        Ok(())
    }
}

fn check_rows(scores: &Tensor, samples: &[SampleMeta], strategy: LossStrategy, classes: usize) -> Result<(), EvalError> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != samples.len() {
        return Err(EvalError::RowCount {
            rows: shape.first().copied().unwrap_or(0),
            samples: samples.len(),
        });
    }
    check_width(shape[1], strategy, classes)
}

/// Full report for averaged `scores` (one row per sample) at cutoff
/// `lambda`. `run_scores` are the per-run matrices behind the average and
/// only feed [`EvalReport::run_accuracy`].
pub fn evaluate(
    scores: &Tensor,
    run_scores: &[Tensor],
    samples: &[SampleMeta],
    lambda: f64,
    strategy: LossStrategy,
    classes: usize,
) -> Result<EvalReport, EvalError> {
    check_cutoff(lambda)?;
    check_rows(scores, samples, strategy, classes)?;
    let mut tally = Tally::default();
    let mut ids: Vec<(u32, ClassRole)> = samples.iter().map(|s| (s.class_id, s.role)).collect();
    ids.sort_by_key(|p| p.0);
    ids.dedup_by_key(|p| p.0);
    let mut rows: Vec<ConfusionRow> = ids
        .into_iter()
        .map(|(class_id, role)| ConfusionRow {
            class_id,
            role,
            counts: vec![0; classes + 1],
        })
        .collect();
    for (meta, row) in samples.iter().zip(scores.rows()) {
        let d = decide(row, lambda, strategy, classes)?;
        tally.add(meta, d)?;
        let col = match d {
            Decision::Accept(k) => k,
            Decision::RejectUnknown => classes,
        };
        let r = rows.binary_search_by_key(&meta.class_id, |r| r.class_id).expect("row exists");
        rows[r].counts[col] += 1;
    }
    let mut run_accuracy = Vec::with_capacity(run_scores.len());
    for run in run_scores {
        check_rows(run, samples, strategy, classes)?;
        let mut t = Tally::default();
        for (meta, row) in samples.iter().zip(run.rows()) {
            t.add(meta, decide(row, lambda, strategy, classes)?)?;
        }
        run_accuracy.push(rate(t.correct, t.known));
    }
    Ok(EvalReport {
        strategy,
        lambda,
        known_total: tally.known,
        ignored_total: tally.ignored,
        never_seen_total: tally.never_seen,
        accuracy: rate(tally.correct, tally.known),
        wrong: rate(tally.wrong, tally.known),
        inconclusive: rate(tally.rejected, tally.known),
        fp_ignored: rate(tally.ignored_accepted, tally.ignored),
        fp_never_seen: rate(tally.never_seen_accepted, tally.never_seen),
        run_accuracy,
        confusion: ConfusionTable { classes, rows },
    })
}

/// Default cutoff grid: 0.00, 0.01, …, 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub fp_never_seen: Option<f64>,
    pub fp_ignored: Option<f64>,
    pub inconclusive: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Metrics at every cutoff of an ascending grid. Cutoffs above 1 are
/// evaluated as 1 (scores equal to 1 are still accepted); negative cutoffs
/// as 0.
pub fn threshold_sweep(
    scores: &Tensor,
    samples: &[SampleMeta],
    grid: &[f64],
    strategy: LossStrategy,
    classes: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if grid.is_empty() || grid.iter().any(|v| v.is_nan()) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::BadGrid);
    }
    check_rows(scores, samples, strategy, classes)?;
    let candidates: Vec<Option<(usize, f64)>> = scores.rows().map(|r| candidate(r, strategy, classes)).collect();
    let mut out = Vec::with_capacity(grid.len());
    for &raw in grid {
        let lambda = raw.clamp(0.0, 1.0);
        let mut t = Tally::default();
        for (meta, c) in samples.iter().zip(&candidates) {
            let d = match c {
                Some((k, s)) if *s >= lambda => Decision::Accept(*k),
                _ => Decision::RejectUnknown,
            };
            t.add(meta, d)?;
        }
        out.push(SweepRow {
            lambda,
            fp_never_seen: rate(t.never_seen_accepted, t.never_seen),
            fp_ignored: rate(t.ignored_accepted, t.ignored),
            inconclusive: rate(t.rejected, t.known),
            accuracy: rate(t.correct, t.known),
        });
    }
    Ok(out)
}

/// Cutoff chosen from a sweep using the ignored partition only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub row: SweepRow,
    /// False when no cutoff reached zero false positives on ℐ; the row
    /// then minimizes that rate instead.
    pub fp_zero_reached: bool,
}

impl OperatingPoint {
    pub fn lambda(&self) -> f64 {
        self.row.lambda
    }
}

/// Lowest inconclusive rate among rows with no false positives on ℐ; ties
/// go to the smaller cutoff. Never-seen rates are not consulted. Without
/// ignored samples every row qualifies.
pub fn select_operating_point(table: &[SweepRow]) -> Result<OperatingPoint, EvalError> {
    if table.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let fp = |r: &SweepRow| r.fp_ignored.unwrap_or(0.0);
    let inc = |r: &SweepRow| r.inconclusive.unwrap_or(0.0);
    let by_key = |key: &dyn Fn(&SweepRow) -> (f64, f64, f64)| {
        *table
            .iter()
            .min_by(|a, b| key(a).partial_cmp(&key(b)).expect("rates are finite"))
            .expect("nonempty")
    };
    let zero: Vec<&SweepRow> = table.iter().filter(|r| fp(r) == 0.0).collect();
    if zero.is_empty() {
        let row = by_key(&|r| (fp(r), inc(r), r.lambda));
        return Ok(OperatingPoint {
            row,
            fp_zero_reached: false,
        });
    }
    let row = by_key(&|r| (if fp(r) == 0.0 { 0.0 } else { 1.0 }, inc(r), r.lambda));
    Ok(OperatingPoint {
        row,
        fp_zero_reached: true,
    })
}

/// Lowest false-positive rate on 𝒩 among sweep rows whose inconclusive
/// rate on 𝒦 does not exceed `max_inconclusive`.
pub fn fp_at_inconclusive(table: &[SweepRow], max_inconclusive: f64) -> Option<SweepRow> {
    table
        .iter()
        .filter(|r| r.inconclusive.is_some_and(|v| v <= max_inconclusive))
        .filter(|r| r.fp_never_seen.is_some())
        .min_by(|a, b| {
            (a.fp_never_seen, a.lambda)
                .partial_cmp(&(b.fp_never_seen, b.lambda))
                .expect("rates are finite")
        })
        .copied()
}
