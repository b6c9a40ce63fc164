//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};
use crate::learn::{SearchRanges, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// First `N_v` columns of the `N_v`-point DFT, extended to `L+1` rows.
    DftSub,
    Random,
    /// Best average column set of the exhaustive DFT search.
    DftSearch,
    /// Phase book learned jointly with the CNN.
    Learned,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::DftSub => "dft_sub",
            Strategy::Random => "random",
            Strategy::DftSearch => "dft_search",
            Strategy::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ls,
    SampleCov,
    Gmm,
    /// Only valid with [`Strategy::Learned`].
    Cnn,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "ls",
            EstimatorKind::SampleCov => "sample_cov",
            EstimatorKind::Gmm => "gmm",
            EstimatorKind::Cnn => "cnn",
        }
    }
}

/// Named array sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// M = 4, L = 2x4 = 8.
    Desk,
    /// M = 8, L = 4x4 = 16.
    Medium,
    /// M = 16, L = 8x8 = 64.
    Large,
}

impl Preset {
    pub fn apply(self, scenario: &mut ScenarioConfig) {
        let (m, rows, cols) = match self {
            Preset::Desk => (4, 2, 4),
            Preset::Medium => (8, 4, 4),
            Preset::Large => (16, 8, 8),
        };
        scenario.bs_antennas = m;
        scenario.ris_rows = rows;
        scenario.ris_cols = cols;
        scenario.ris_elements = rows * cols;
    }
}

/// Sweep points are the cartesian product of both lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub snr_db: Vec<f64>,
    pub n_v: Vec<usize>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            snr_db: vec![20.0],
            n_v: vec![4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSettings {
    pub components: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Covariance floor relative to the mean per-entry channel power.
    pub relative_floor: f64,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            components: 16,
            max_iter: 100,
            tol: 1e-6,
            relative_floor: 1e-4,
        }
    }
}

/// Random hyper-parameter search; with zero trials `[train]` is used as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSearchSettings {
    pub trials: usize,
    pub ranges: SearchRanges,
}

/// Exhaustive DFT column search, used by `search-dft` and `histogram`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// Estimator that scores each column set.
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    /// Number of training samples searched.
    pub samples: usize,
    pub max_combinations: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Gmm,
            snr_db: 40.0,
            samples: 1000,
            max_combinations: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramSettings {
    pub n_v: usize,
    pub output: PathBuf,
}

impl Default for HistogramSettings {
    fn default() -> Self {
        Self {
            n_v: 4,
            output: PathBuf::from("histogram.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Overrides the array sizes in `[scenario]`.
    pub preset: Option<Preset>,
    /// Generator settings. Its `seed` is replaced by each run seed.
    pub scenario: ScenarioConfig,
    /// Use this RISD file instead of generating data.
    pub dataset_path: Option<PathBuf>,
    /// Samples `0..train_count` are for fitting and training.
    pub train_count: usize,
    /// Samples `train_count..train_count + test_count` are for evaluation only.
    pub test_count: usize,
    /// Tail fraction of the training samples used for CNN validation.
    pub validation_fraction: f64,
    pub strategies: Vec<Strategy>,
    pub estimators: Vec<EstimatorKind>,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub artifact_dir: PathBuf,
    /// Use this checkpoint for the learned strategy at every sweep point.
    pub learned_checkpoint: Option<PathBuf>,
    pub gmm: GmmSettings,
    pub train: TrainConfig,
    pub hyper_search: HyperSearchSettings,
    pub search: SearchSettings,
    pub histogram: HistogramSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            scenario: ScenarioConfig::default(),
            dataset_path: None,
            train_count: 20_000,
            test_count: 2_000,
            validation_fraction: 0.1,
            strategies: vec![Strategy::DftSub, Strategy::Random],
            estimators: vec![EstimatorKind::Ls, EstimatorKind::SampleCov],
            sweep: Sweep::default(),
            seeds: vec![1],
            output: PathBuf::from("results.csv"),
            artifact_dir: PathBuf::from("artifacts"),
            learned_checkpoint: None,
            gmm: GmmSettings::default(),
            train: TrainConfig::default(),
            hyper_search: HyperSearchSettings::default(),
            search: SearchSettings::default(),
            histogram: HistogramSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Apply the preset to the scenario.
    pub fn resolved(mut self) -> Self {
        if let Some(p) = self.preset {
            p.apply(&mut self.scenario);
        }
        self
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = Some(preset);
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dataset_path.is_none() {
            self.scenario.validate().map_err(|e| Error::Config(format!("[scenario]: {e}")))?;
        }
        if self.train_count == 0 {
            return fail("train_count must be at least 1".into());
        }
        if self.test_count == 0 {
            return fail("test_count must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.strategies.is_empty() || self.estimators.is_empty() {
            return fail("strategies and estimators must be nonempty".into());
        }
        if self.sweep.snr_db.is_empty() || self.sweep.n_v.is_empty() {
            return fail("sweep needs at least one snr_db and one n_v value".into());
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return fail("sweep SNR values must be finite".into());
        }
        if self.sweep.n_v.contains(&0) || self.histogram.n_v == 0 {
            return fail("N_v values must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.gmm.components == 0 || !(self.gmm.relative_floor > 0.0) || !(self.gmm.tol >= 0.0) {
            return fail("[gmm] needs components >= 1, relative_floor > 0 and tol >= 0".into());
        }
        if self.search.samples == 0 {
            return fail("[search] samples must be at least 1".into());
        }
        if self.search.estimator == EstimatorKind::Cnn {
            return fail("[search] estimator cannot be cnn".into());
        }
        if self.estimators.contains(&EstimatorKind::Cnn) && !self.strategies.contains(&Strategy::Learned) {
            return fail("the cnn estimator only runs with the learned strategy".into());
        }
        self.train.validate().map_err(|e| Error::Config(format!("[train]: {e}")))?;
        if self.hyper_search.trials > 0 {
            self.hyper_search
                .ranges
                .validate()
                .map_err(|e| Error::Config(format!("[hyper_search]: {e}")))?;
        }
        Ok(())
    }

    /// Training samples used for fitting, then for validation.
    pub fn training_split(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.train_count;
        let val = ((n as f64 * self.validation_fraction).round() as usize).min(n.saturating_sub(1));
        let val = if self.validation_fraction > 0.0 { val.max(1).min(n - 1) } else { 0 };
        (0..n - val, n - val..n)
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.train_count..self.train_count + self.test_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_file() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            preset = "medium"
            strategies = ["dft_sub", "learned"]
            estimators = ["gmm", "cnn"]
            seeds = [3]
            [sweep]
            snr_db = [0.0, 10.0]
            n_v = [8]
            [train]
            epochs = 2
            [train.architecture]
            kernels = 8
            layers = 3
            activation = "tanh"
            batch_norm = false
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.bs_antennas, 8);
        assert_eq!(cfg.scenario.ris_elements, 16);
        assert_eq!(cfg.train.epochs, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml("tran_count = 3").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cnn_needs_learned_strategy() {
        let cfg = ExperimentConfig {
            estimators: vec![EstimatorKind::Cnn],
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn splits_are_disjoint() {
        let cfg = ExperimentConfig {
            train_count: 100,
            test_count: 10,
            ..ExperimentConfig::default()
        };
        let (fit, val) = cfg.training_split();
        assert_eq!((fit.clone(), val.clone()), (0..90, 90..100));
        assert_eq!(cfg.test_range(), 100..110);
        let tiny = ExperimentConfig {
            train_count: 2,
            ..ExperimentConfig::default()
        };
        assert_eq!(tiny.training_split(), (0..1, 1..2));
    }
}
