//! Optimization loop, ensembles of independently seeded runs, and the
//! objectosphere hyperparameter search.
//!
//! Training is deterministic in `(seed, config, data)`: the seed fixes the
//! weight initialization (through [`Model::new`]) and, on a separate
//! stream, the per-epoch shuffling. Ensemble run `r` uses seed
//! `seed + r`, so runs differ in both.

mod optim;
mod tune;

pub use optim::{cosine_lr, Adam};
pub use tune::{tune_alpha_beta, TuneResult, TuneRow};

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalError;
use crate::losses::{batch_loss, LossError, LossSpec, LossStrategy, Target};
use crate::network::{batch_tensor, feature_norm, Mode, Model, NetworkConfig, NetworkError};
use crate::spectra::{ClassRole, Sample};
use crate::tensor::{softmax_in_place, Graph, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("diverged: loss became {loss} in epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("unknowns are test-only: sample {id} (class {class_id}) is never-seen")]
    NeverSeenSample { id: usize, class_id: u32 },
    #[error("training config: {0}")]
    Config(String),
    #[error("models disagree on output count: {0:?}")]
    MixedOutputs(Vec<usize>),
    #[error("network has {actual} outputs but {strategy} with {classes} known classes needs {expected}")]
    OutputMismatch {
        strategy: LossStrategy,
        classes: usize,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Optimization settings. Every field has a default, so a config file only
/// needs the values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate at the first step; decays along a cosine to
    /// `final_learning_rate` at the last step.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Number of independently seeded runs averaged at prediction time.
    pub ensemble_size: usize,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            optimizer: Optimizer::Adam,
            seed: 0,
            ensemble_size: 5,
            loss: LossSpec::new(LossStrategy::EntropicOpenSet),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.ensemble_size == 0 {
            return fail("ensemble size must be at least 1");
        }
        let lr_ok = |v: f64| v.is_finite() && v > 0.0;
        if !lr_ok(self.learning_rate) || !lr_ok(self.final_learning_rate) {
            return fail("learning rates must be positive");
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Seed of ensemble run `run`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add(run as u64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses during the epoch.
    pub loss: f64,
    /// Fraction of known training samples whose top training-mode logit
    /// is their label, measured as the epoch runs.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochLog>,
    /// Loss of the freshly initialized model on the first batch.
    pub initial_loss: f64,
}

/// Fails on any never-seen sample. Run before the first epoch.
pub fn audit_training_set(samples: &[Sample]) -> Result<(), TrainError> {
    match samples.iter().find(|s| s.role == ClassRole::NeverSeen) {
        Some(s) => Err(TrainError::NeverSeenSample {
            id: s.id,
            class_id: s.class_id,
        }),
        None => Ok(()),
    }
}

pub fn train(model: Model, config: &TrainConfig, samples: &[Sample], classes: usize) -> Result<TrainOutcome, TrainError> {
    train_with_progress(model, config, samples, classes, &mut |_| {})
}

/// [`train`] reporting every finished epoch to `on_epoch`.
///
/// Ignored samples are skipped for strategies that do not train on them.
pub fn train_with_progress(
    mut model: Model,
    config: &TrainConfig,
    samples: &[Sample],
    classes: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    audit_training_set(samples)?;
    let spec = config.loss;
    let expected = spec.strategy.output_count(classes);
    if model.config().output_count != expected {
        return Err(TrainError::OutputMismatch {
            strategy: spec.strategy,
            classes,
            expected,
            actual: model.config().output_count,
        });
    }
    let used: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.role == ClassRole::Known || spec.strategy.trains_on_ignored())
        .collect();
    if used.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let targets: Vec<Target> = used
        .iter()
        .map(|s| match s.role {
            ClassRole::Known => s.label.map(Target::known).ok_or(LossError::MissingLabel),
            _ => Ok(Target::ignored()),
        })
        .collect::<Result<_, _>>()?;
    let known_total = targets.iter().filter(|t| t.role == ClassRole::Known).count();

    let input_len = model.config().input_len;
    let sizes: Vec<usize> = model.parameters().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let batches_per_epoch = used.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..used.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial_loss = None;
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| used[i].input.as_slice()).collect();
            let batch_targets: Vec<Target> = batch.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let x = g.constant(batch_tensor(&inputs, input_len)?);
            let pass = model.forward(&mut g, x, Mode::Train)?;
            let loss = batch_loss(&mut g, pass.logits, pass.features, &batch_targets, &spec, classes)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: value });
            }
            initial_loss.get_or_insert(value);
            loss_sum += value * batch.len() as f64;
            for (row, t) in g.value(pass.logits).rows().zip(&batch_targets) {
                if t.role == ClassRole::Known && Some(argmax(row)) == t.label {
                    correct += 1;
                }
            }
            let mut grads = g.backward(loss);
            let grads: Vec<Option<Tensor>> = pass.params.iter().map(|&p| grads.take(p)).collect();
            let lr = cosine_lr(step, total_steps, config.learning_rate, config.final_learning_rate);
            adam.step(model.parameters_mut(), &grads, lr);
            model.apply_batch_stats(&pass.batch_stats);
            step += 1;
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / used.len() as f64,
            train_accuracy: if known_total == 0 { 0.0 } else { correct as f64 / known_total as f64 },
        };
        if !log.loss.is_finite() || model.parameters().iter().any(|t| !t.is_finite()) {
            return Err(TrainError::Diverged { epoch, loss: log.loss });
        }
        on_epoch(&log);
        history.push(log);
    }
    Ok(TrainOutcome {
        model,
        history,
        initial_loss: initial_loss.expect("at least one batch"),
    })
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

/// Trains `config.ensemble_size` models from seeds `seed, seed + 1, …`.
/// `on_epoch` receives the run index with every epoch log.
pub fn train_ensemble(
    network: &NetworkConfig,
    config: &TrainConfig,
    samples: &[Sample],
    classes: usize,
    on_epoch: &mut dyn FnMut(usize, &EpochLog),
) -> Result<Vec<TrainOutcome>, TrainError> {
    config.validate()?;
    (0..config.ensemble_size)
        .map(|r| {
            let seed = run_seed(config.seed, r);
            let run_config = TrainConfig { seed, ..config.clone() };
            let model = Model::new(network.clone(), seed)?;
            train_with_progress(model, &run_config, samples, classes, &mut |log| on_epoch(r, log))
        })
        .collect()
}

/// Per-run and averaged softmax scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    /// One `[N, outputs]` softmax matrix per run.
    pub runs: Vec<Tensor>,
    /// Elementwise mean of `runs`.
    pub mean: Tensor,
    /// One `[N, feature_dim]` deep-feature matrix per run.
    pub features: Vec<Tensor>,
}

impl EnsemblePrediction {
    /// Top class of the averaged scores per sample (over every output,
    /// including a background slot).
    pub fn argmax(&self) -> Vec<usize> {
        self.mean.rows().map(argmax).collect()
    }

    /// ‖F‖ per sample, averaged over runs.
    pub fn mean_feature_norms(&self) -> Vec<f64> {
        let r = self.features.len() as f64;
        let mut acc = vec![0.0; self.mean.shape()[0]];
        for f in &self.features {
            for (a, n) in acc.iter_mut().zip(feature_norm(f)) {
                *a += n / r;
            }
        }
        acc
    }
}

/// Averages softmax scores of `models` over the same inputs.
pub fn ensemble_predict(models: &[&Model], inputs: &[&[f64]]) -> Result<EnsemblePrediction, TrainError> {
    if models.is_empty() {
        return Err(TrainError::Config("ensemble needs at least one model".into()));
    }
    let outputs: Vec<usize> = models.iter().map(|m| m.config().output_count).collect();
    if outputs.iter().any(|&o| o != outputs[0]) {
        return Err(TrainError::MixedOutputs(outputs));
    }
    let mut runs = Vec::with_capacity(models.len());
    let mut features = Vec::with_capacity(models.len());
    for m in models {
        let (mut logits, f) = m.predict(inputs)?;
        let width = outputs[0];
        logits.data_mut().chunks_exact_mut(width).for_each(softmax_in_place);
        runs.push(logits);
        features.push(f);
    }
    let mut mean = Tensor::zeros(runs[0].shape());
    for r in &runs {
        mean.add_assign(r);
    }
    let mean = mean.scale(1.0 / runs.len() as f64);
    Ok(EnsemblePrediction { runs, mean, features })
}

/// `epoch,loss,train_accuracy` rows.
pub fn history_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,train_accuracy\n");
    for h in history {
        writeln!(s, "{},{},{}", h.epoch, h.loss, h.train_accuracy).unwrap();
    }
    s
}

/// Epochs at which the trailing `window`-epoch mean loss went up.
pub fn smoothed_increases(history: &[EpochLog], window: usize) -> Vec<usize> {
    let w = window.max(1);
    let means: Vec<(usize, f64)> = history
        .windows(w)
        .map(|h| (h[w - 1].epoch, h.iter().map(|e| e.loss).sum::<f64>() / w as f64))
        .collect();
    means.windows(2).filter(|p| p[1].1 > p[0].1).map(|p| p[1].0).collect()
}
