//! Spectra, preprocessing, dataset manifests and synthetic data.

mod csv;
mod dataset;
mod manifest;
mod split;
mod synthetic;

pub use self::csv::{read_csv, read_csv_str, write_csv, write_csv_string};
pub use dataset::{load_samples, Phase, ReadEvent, ReadLog, Sample};
pub use manifest::{ClassEntry, DatasetManifest, Record, RecordSource};
pub use split::{split_dataset, SplitInput, SplitResult};
pub use synthetic::{generate_synthetic, BenchmarkSpec, GeneratedClass, Peak, SyntheticClassProfile, WavenumberGrid};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default Rayleigh cut position in cm⁻¹.
pub const DEFAULT_CUT_BELOW: f64 = 150.0;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("spectrum has no bins")]
    Empty,
    #[error("wavenumbers and intensities differ in length ({wavenumbers} vs {intensities})")]
    LengthMismatch { wavenumbers: usize, intensities: usize },
    #[error("wavenumbers not strictly increasing at bin {index}")]
    NotIncreasing { index: usize },
    #[error("non-finite value at bin {index}")]
    NonFinite { index: usize },
    #[error("empty after cut: {remaining} bins at or above {cut_below} cm⁻¹, need at least 2")]
    EmptyAfterCut { cut_below: f64, remaining: usize },
    #[error("{path}: row {row}: {message}")]
    Parse { path: String, row: usize, message: String },
    #[error("{path}: no rows")]
    NoRows { path: String },
    #[error("class {class_id} is known but has {count} record(s); cannot stratify")]
    TooFewRecords { class_id: u32, count: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid synthetic profile: {0}")]
    Profile(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Role a class plays in open-set training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRole {
    /// Classes the classifier must identify.
    Known,
    /// Classes shown during training only as examples to reject.
    Ignored,
    /// Classes that appear only at test time.
    NeverSeen,
}

impl ClassRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassRole::Known => "known",
            ClassRole::Ignored => "ignored",
            ClassRole::NeverSeen => "never_seen",
        }
    }
}

impl fmt::Display for ClassRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One spectrum: intensities sampled on a strictly increasing wavenumber
/// axis (cm⁻¹).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    wavenumbers: Vec<f64>,
    intensities: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavenumbers: Vec<f64>, intensities: Vec<f64>) -> Result<Self, SpectraError> {
        if wavenumbers.len() != intensities.len() {
            return Err(SpectraError::LengthMismatch {
                wavenumbers: wavenumbers.len(),
                intensities: intensities.len(),
            });
        }
        if wavenumbers.is_empty() {
            return Err(SpectraError::Empty);
        }
        if let Some(index) = wavenumbers
            .iter()
            .zip(&intensities)
            .position(|(w, i)| !w.is_finite() || !i.is_finite())
        {
            return Err(SpectraError::NonFinite { index });
        }
        if let Some(index) = wavenumbers.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SpectraError::NotIncreasing { index: index + 1 });
        }
        Ok(Self {
            wavenumbers,
            intensities,
        })
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn into_intensities(self) -> Vec<f64> {
        self.intensities
    }
}

/// Removes every bin below `cut_below` (the laser line) and min-max
/// rescales what remains to `[0, 1]`.
///
/// A constant remainder maps to all zeros.
pub fn preprocess(raw: &Spectrum, cut_below: f64) -> Result<Spectrum, SpectraError> {
    let start = raw.wavenumbers.partition_point(|&w| w < cut_below);
    let remaining = raw.len() - start;
    if remaining < 2 {
        return Err(SpectraError::EmptyAfterCut { cut_below, remaining });
    }
    let wavenumbers = raw.wavenumbers[start..].to_vec();
    let kept = &raw.intensities[start..];
    let min = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let max = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let intensities = if range > 0.0 {
        kept.iter().map(|&v| (v - min) / range).collect()
    } else {
        vec![0.0; kept.len()]
    };
    Ok(Spectrum {
        wavenumbers,
        intensities,
    })
}
