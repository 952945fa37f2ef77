//! Training objectives for the four open-set strategies.
//!
//! The scalar functions operate on a single softmax score vector and are the
//! reference definitions. [`batch_loss`] builds the same quantities on a
//! [`Graph`] so they can be differentiated; both use the natural logarithm.
//!
//! | strategy            | outputs | known sample  | ignored sample              |
//! |---------------------|---------|---------------|-----------------------------|
//! | softmax threshold   | `C`     | cross entropy | not used for training       |
//! | background class    | `C + 1` | cross entropy | cross entropy on slot `C`   |
//! | entropic open set   | `C`     | cross entropy | `-(1/C) Σ_c log S_c`        |
//! | objectosphere       | `C`     | entropic + `α max(β - ‖F‖², 0)` | entropic + `α ‖F‖²` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::ClassRole;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Tolerance on `Σ S_c = 1` when validating score vectors.
const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("unknowns are test-only")]
    NeverSeenInTraining,
    #[error("label {label} out of range for {classes} known classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("known sample without a label")]
    MissingLabel,
    #[error("scores are not a probability vector: {0}")]
    InvalidScores(String),
    #[error("{strategy} does not train on ignored samples")]
    IgnoredNotTrainable { strategy: LossStrategy },
    #[error("alpha and beta must be finite and nonnegative, got alpha={alpha}, beta={beta}")]
    InvalidHyperparameters { alpha: f64, beta: f64 },
    #[error("{0}")]
    Shape(String),
    #[error("unknown strategy {0:?} (expected softmax_threshold, background_class, entropic_open_set or objectosphere)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossStrategy {
    SoftmaxThreshold,
    BackgroundClass,
    EntropicOpenSet,
    Objectosphere,
}

impl LossStrategy {
    pub const ALL: [LossStrategy; 4] = [
        LossStrategy::SoftmaxThreshold,
        LossStrategy::BackgroundClass,
        LossStrategy::EntropicOpenSet,
        LossStrategy::Objectosphere,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossStrategy::SoftmaxThreshold => "softmax_threshold",
            LossStrategy::BackgroundClass => "background_class",
            LossStrategy::EntropicOpenSet => "entropic_open_set",
            LossStrategy::Objectosphere => "objectosphere",
        }
    }

    /// Network output count for `classes` known classes.
    pub fn output_count(self, classes: usize) -> usize {
        match self {
            LossStrategy::BackgroundClass => classes + 1,
            _ => classes,
        }
    }

    /// Whether ignored-class samples take part in training.
    pub fn trains_on_ignored(self) -> bool {
        self != LossStrategy::SoftmaxThreshold
    }
}

impl fmt::Display for LossStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossStrategy {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LossError::UnknownStrategy(s.to_string()))
    }
}

/// Strategy plus the objectosphere hyperparameters, which every other
/// strategy ignores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub strategy: LossStrategy,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

impl LossSpec {
    pub fn new(strategy: LossStrategy) -> Self {
        Self {
            strategy,
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn objectosphere(alpha: f64, beta: f64) -> Self {
        Self {
            strategy: LossStrategy::Objectosphere,
            alpha,
            beta,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(LossError::InvalidHyperparameters {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }
}

fn check_scores(scores: &[f64]) -> Result<(), LossError> {
    if scores.is_empty() {
        return Err(LossError::InvalidScores("empty".into()));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(LossError::InvalidScores(format!("entry {v}")));
    }
    let total: f64 = scores.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(LossError::InvalidScores(format!("sum {total}")));
    }
    Ok(())
}

fn known_label(label: Option<usize>, classes: usize) -> Result<usize, LossError> {
    let label = label.ok_or(LossError::MissingLabel)?;
    if label >= classes {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    Ok(label)
}

/// `-log S_label`.
pub fn cross_entropy(scores: &[f64], label: usize) -> Result<f64, LossError> {
    check_scores(scores)?;
    if label >= scores.len() {
        return Err(LossError::LabelOutOfRange {
            label,
            classes: scores.len(),
        });
    }
    Ok(-scores[label].ln())
}

/// Cross entropy for known samples; `-(1/C) Σ_c log S_c` for ignored ones,
/// which is smallest at the uniform distribution.
pub fn entropic_open_set_loss(scores: &[f64], role: ClassRole, label: Option<usize>) -> Result<f64, LossError> {
    match role {
        ClassRole::Known => cross_entropy(scores, known_label(label, scores.len())?),
        ClassRole::Ignored => {
            check_scores(scores)?;
            let c = scores.len() as f64;
            Ok(-scores.iter().map(|s| s.ln()).sum::<f64>() / c)
        }
        ClassRole::NeverSeen => Err(LossError::NeverSeenInTraining),
    }
}

/// Squared-magnitude penalty on the deep feature: `max(β - ‖F‖², 0)` for
/// known samples, `‖F‖²` for ignored ones.
pub fn feature_penalty(feature: &[f64], role: ClassRole, beta: f64) -> Result<f64, LossError> {
    let sq: f64 = feature.iter().map(|v| v * v).sum();
    match role {
        ClassRole::Known => Ok((beta - sq).max(0.0)),
        ClassRole::Ignored => Ok(sq),
        ClassRole::NeverSeen => Err(LossError::NeverSeenInTraining),
    }
}

/// Entropic open-set loss plus `alpha` times [`feature_penalty`].
pub fn objectosphere_loss(
    scores: &[f64],
    feature: &[f64],
    role: ClassRole,
    label: Option<usize>,
    alpha: f64,
    beta: f64,
) -> Result<f64, LossError> {
    LossSpec::objectosphere(alpha, beta).validate()?;
    let base = entropic_open_set_loss(scores, role, label)?;
    if alpha == 0.0 {
        return Ok(base);
    }
    Ok(base + alpha * feature_penalty(feature, role, beta)?)
}

/// One-hot target over `C + 1` slots; ignored samples go to slot `C`.
pub fn background_class_encode(role: ClassRole, label: Option<usize>, classes: usize) -> Result<Vec<f64>, LossError> {
    let slot = match role {
        ClassRole::Known => known_label(label, classes)?,
        ClassRole::Ignored => classes,
        ClassRole::NeverSeen => return Err(LossError::NeverSeenInTraining),
    };
    let mut t = vec![0.0; classes + 1];
    t[slot] = 1.0;
    Ok(t)
}

/// Role and known-class label of one training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub role: ClassRole,
    pub label: Option<usize>,
}

impl Target {
    pub fn known(label: usize) -> Self {
        Self {
            role: ClassRole::Known,
            label: Some(label),
        }
    }

    pub fn ignored() -> Self {
        Self {
            role: ClassRole::Ignored,
            label: None,
        }
    }
}

/// Soft target row whose cross entropy against `log_softmax(logits)` is the
/// strategy's classification term.
pub fn target_distribution(spec: &LossSpec, target: Target, classes: usize) -> Result<Vec<f64>, LossError> {
    match (spec.strategy, target.role) {
        (_, ClassRole::NeverSeen) => Err(LossError::NeverSeenInTraining),
        (LossStrategy::BackgroundClass, role) => background_class_encode(role, target.label, classes),
        (_, ClassRole::Known) => {
            let mut t = vec![0.0; classes];
            t[known_label(target.label, classes)?] = 1.0;
            Ok(t)
        }
        (LossStrategy::SoftmaxThreshold, ClassRole::Ignored) => Err(LossError::IgnoredNotTrainable { strategy: spec.strategy }),
        (_, ClassRole::Ignored) => Ok(vec![1.0 / classes as f64; classes]),
    }
}

/// Mean training loss over a batch, as a scalar graph node.
///
/// `logits` is `[N, outputs]` and `features` the deep feature `[N, D]` of
/// the same forward pass; `classes` is the known-class count `C`.
pub fn batch_loss(
    g: &mut Graph,
    logits: Var,
    features: Var,
    targets: &[Target],
    spec: &LossSpec,
    classes: usize,
) -> Result<Var, LossError> {
    spec.validate()?;
    let shape = g.value(logits).shape().to_vec();
    let outputs = spec.strategy.output_count(classes);
    if shape.len() != 2 || shape[0] != targets.len() || shape[1] != outputs {
        return Err(LossError::Shape(format!(
            "{} expects logits [{}, {outputs}], got {shape:?}",
            spec.strategy,
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut rows = Vec::with_capacity(targets.len() * outputs);
    for t in targets {
        rows.extend(target_distribution(spec, *t, classes)?);
    }
    let t = g.constant(Tensor::new(shape, rows)?);
    let ls = g.log_softmax(logits)?;
    let weighted = g.mul(t, ls)?;
    let total = g.sum(weighted);
    let ce = g.scale(total, -1.0 / n);
    if spec.strategy != LossStrategy::Objectosphere || spec.alpha == 0.0 {
        return Ok(ce);
    }

    let known_mask: Vec<f64> = targets.iter().map(|t| f64::from(u8::from(t.role == ClassRole::Known))).collect();
    let ignored_mask: Vec<f64> = known_mask.iter().map(|k| 1.0 - k).collect();
    let sq = g.square(features);
    let norm_sq = g.row_sum(sq)?;
    let neg = g.scale(norm_sq, -1.0);
    let gap = g.add_scalar(neg, spec.beta);
    let hinge = g.relu(gap);
    let km = g.constant(Tensor::from_vec(known_mask));
    let im = g.constant(Tensor::from_vec(ignored_mask));
    let known_part = g.mul(km, hinge)?;
    let ignored_part = g.mul(im, norm_sq)?;
    let penalty = g.add(known_part, ignored_part)?;
    let penalty = g.sum(penalty);
    let penalty = g.scale(penalty, spec.alpha / n);
    Ok(g.add(ce, penalty)?)
}
