use super::{ensemble_predict, train_ensemble, TrainConfig, TrainError};
use crate::evaluation::{select_operating_point, threshold_sweep, SampleMeta};
use crate::losses::LossSpec;
use crate::network::{Model, NetworkConfig};
use crate::spectra::{ClassRole, Sample};

/// Outcome of one grid point at its selected cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneRow {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub fp_ignored: Option<f64>,
    pub inconclusive: Option<f64>,
    pub accuracy: Option<f64>,
    pub fp_zero_reached: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub alpha: f64,
    pub beta: f64,
    /// One row per grid point, in grid order.
    pub table: Vec<TuneRow>,
}

impl TuneResult {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("alpha,beta,lambda,fp_ignored,inconclusive,accuracy,fp_zero_reached\n");
        for r in &self.table {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.alpha,
                r.beta,
                r.lambda,
                opt(r.fp_ignored),
                opt(r.inconclusive),
                opt(r.accuracy),
                r.fp_zero_reached
            ));
        }
        s
    }
}

/// Trains an objectosphere ensemble for every `(alpha, beta)` and keeps the
/// one with the lowest known-class inconclusive rate at its operating point
/// (zero false positives on the ignored validation samples).
///
/// Points that reach zero false positives beat those that do not; ties go
/// to the smaller alpha, then the smaller beta. `validation` may hold known
/// and ignored samples only.
pub fn tune_alpha_beta(
    grid: &[(f64, f64)],
    network: &NetworkConfig,
    config: &TrainConfig,
    train: &[Sample],
    validation: &[Sample],
    classes: usize,
    lambda_grid: &[f64],
) -> Result<TuneResult, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty alpha/beta grid".into()));
    }
    if let Some(s) = validation.iter().find(|s| s.role == ClassRole::NeverSeen) {
        return Err(TrainError::NeverSeenSample {
            id: s.id,
            class_id: s.class_id,
        });
    }
    let inputs: Vec<&[f64]> = validation.iter().map(|s| s.input.as_slice()).collect();
    let meta: Vec<SampleMeta> = validation.iter().map(SampleMeta::from).collect();
    let mut table = Vec::with_capacity(grid.len());
    for &(alpha, beta) in grid {
        let cfg = TrainConfig {
            loss: LossSpec::objectosphere(alpha, beta),
            ..config.clone()
        };
        let runs = train_ensemble(network, &cfg, train, classes, &mut |_, _| {})?;
        let models: Vec<&Model> = runs.iter().map(|r| &r.model).collect();
        let pred = ensemble_predict(&models, &inputs)?;
        let sweep = threshold_sweep(&pred.mean, &meta, lambda_grid, cfg.loss.strategy, classes)?;
        let op = select_operating_point(&sweep)?;
        table.push(TuneRow {
            alpha,
            beta,
            lambda: op.lambda(),
            fp_ignored: op.row.fp_ignored,
            inconclusive: op.row.inconclusive,
            accuracy: op.row.accuracy,
            fp_zero_reached: op.fp_zero_reached,
        });
    }
    let key = |r: &TuneRow| {
        (
            u8::from(!r.fp_zero_reached),
            if r.fp_zero_reached { 0.0 } else { r.fp_ignored.unwrap_or(0.0) },
            r.inconclusive.unwrap_or(0.0),
            r.alpha,
            r.beta,
        )
    };
    let best = table
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite metrics"))
        .expect("nonempty grid");
    Ok(TuneResult {
        alpha: best.alpha,
        beta: best.beta,
        table,
    })
}
