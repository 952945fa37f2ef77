use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::evaluation::default_grid;
use crate::losses::LossStrategy;
use crate::network::NetworkConfig;
use crate::spectra::BenchmarkSpec;
use crate::training::TrainConfig;

/// Everything one command needs, read from a TOML file.
///
/// `seed` is the single source of randomness: it overrides `train.seed`
/// and `benchmark.seed` when the configuration is resolved. The network's
/// `input_len` and `output_count` are always derived from the data and the
/// strategy. Relative paths are resolved against the directory of the
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Where every output of the command goes; created if absent.
    pub out_dir: PathBuf,
    /// Dataset manifest for train, evaluate, sweep and compare.
    pub manifest: Option<PathBuf>,
    /// Directory holding `run_<i>.ckpt` for evaluate and sweep; defaults
    /// to `out_dir`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Fixed cutoff. When absent the cutoff is selected from the sweep.
    pub lambda: Option<f64>,
    /// Ascending cutoffs for sweeps; default 0.00 to 1.00 in steps of 0.01.
    pub lambda_grid: Vec<f64>,
    /// Treat every class as known and re-split all records.
    pub closed_world: bool,
    /// Objectosphere `(alpha, beta)` candidates. When nonempty, objectosphere
    /// training first picks the best point; otherwise `train.loss` is used.
    pub tune_grid: Vec<(f64, f64)>,
    /// Train fraction written into generated manifests.
    pub train_fraction: f64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub benchmark: BenchmarkSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            manifest: None,
            checkpoint_dir: None,
            lambda: None,
            lambda_grid: default_grid(),
            closed_world: false,
            tune_grid: Vec::new(),
            train_fraction: 5.0 / 6.0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            benchmark: BenchmarkSpec::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strategy: Option<LossStrategy>,
    pub manifest: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.out_dir = absolute(base_dir, &cfg.out_dir);
        cfg.manifest = cfg.manifest.map(|p| absolute(base_dir, &p));
        cfg.checkpoint_dir = cfg.checkpoint_dir.map(|p| absolute(base_dir, &p));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        Self::from_toml_str(&text, &base)
    }

    /// Applies overrides (paths relative to `cwd`), propagates the seed and
    /// validates.
    pub fn resolve(mut self, o: &Overrides, cwd: &Path) -> Result<Self, ExperimentError> {
        if let Some(p) = &o.out_dir {
            self.out_dir = absolute(cwd, p);
        }
        if let Some(p) = &o.manifest {
            self.manifest = Some(absolute(cwd, p));
        }
        if let Some(p) = &o.checkpoint_dir {
            self.checkpoint_dir = Some(absolute(cwd, p));
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = o.strategy {
            self.train.loss.strategy = s;
        }
        self.train.seed = self.seed;
        self.benchmark.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.train.validate()?;
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(ExperimentError::Config(format!("lambda {l} outside [0, 1]")));
            }
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(ExperimentError::Config("lambda_grid must be nonempty and ascending".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ExperimentError::Config(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        for &(a, b) in &self.tune_grid {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(ExperimentError::Config(format!("tune_grid point ({a}, {b}) must be nonnegative")));
            }
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.checkpoint_dir.as_deref().unwrap_or(&self.out_dir)
    }

    pub fn manifest_path(&self) -> Result<&Path, ExperimentError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| ExperimentError::Config("no manifest given (set `manifest` or pass --manifest)".into()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults_and_resolves_paths() {
        let cfg = RunConfig::from_toml_str("seed = 4\nout_dir = \"runs/a\"\nmanifest = \"data/manifest.toml\"\n", Path::new("/base")).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/base/runs/a"));
        assert_eq!(cfg.manifest.as_deref(), Some(Path::new("/base/data/manifest.toml")));
        assert_eq!(cfg.lambda_grid.len(), 101);
        let cfg = cfg.resolve(&Overrides::default(), Path::new("/")).unwrap();
        assert_eq!((cfg.train.seed, cfg.benchmark.seed), (4, 4));
        assert_eq!(cfg.checkpoint_dir(), Path::new("/base/runs/a"));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            out_dir: Some("x".into()),
            seed: Some(11),
            strategy: Some(LossStrategy::BackgroundClass),
            manifest: None,
            checkpoint_dir: None,
        };
        let cfg = RunConfig::default().resolve(&o, Path::new("/cwd")).unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("/cwd/x"));
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.train.loss.strategy, LossStrategy::BackgroundClass);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.tune_grid = vec![(0.1, 2.0)];
        cfg.lambda = Some(0.9);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string(), Path::new("/")).unwrap();
        assert_eq!(back.tune_grid, cfg.tune_grid);
        assert_eq!(back.lambda, cfg.lambda);
        assert_eq!(back.network, cfg.network);
        assert_eq!(back.train, cfg.train);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("sead = 1\n", Path::new("/")).is_err());
        let bad = [
            RunConfig { lambda: Some(1.5), ..RunConfig::default() },
            RunConfig { lambda_grid: vec![0.5, 0.1], ..RunConfig::default() },
            RunConfig { tune_grid: vec![(-1.0, 1.0)], ..RunConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
