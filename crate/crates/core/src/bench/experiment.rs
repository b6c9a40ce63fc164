//! Subcommand implementations: data generation, model fitting, the DFT
//! search, evaluation sweeps and the column histogram.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{artifact_path, digest, digest_bytes, ensure_dir, require};
use super::config::{EstimatorKind, ExperimentConfig, GmmSettings, SearchSettings, Strategy};
use crate::channel::{self, ChannelDataset, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimators::{gmm_fit, load_gmm, save_gmm, ChannelEstimator, GmmFitOptions, GmmModel, LsEstimator, SampleCovEstimator};
use crate::learn::{
    hyper_search, load_checkpoint, save_checkpoint, train_joint, write_training_log, PhaseCnnModel, SearchRanges,
    TrainConfig,
};
use crate::linalg::{vec_of, CMatrix, CVector, C64};
use crate::model::{nmse, noise_matrix, snr_to_noise_variance, PhaseMatrix, SystemDims};
use crate::phase::{dft_column_subset, dft_submatrix, exhaustive_dft_search, random_phases, write_histogram_csv, DftSearchResult, SearchOptions};
use crate::rng::{derive_seed, item_rng, label, rng_from_seed};

pub const RESULT_HEADER: &str = "strategy,estimator,snr_db,n_v,nmse,samples,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub strategy: Strategy,
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub n_v: usize,
    pub nmse: f64,
    pub samples: usize,
    pub seed: u64,
}

pub fn results_csv(records: &[ResultRecord]) -> String {
    let mut s = format!("{RESULT_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{},{}",
            r.strategy.name(),
            r.estimator.name(),
            r.snr_db,
            r.n_v,
            r.nmse,
            r.samples,
            r.seed
        );
    }
    s
}

/// Outcome of the exhaustive search as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub n_v: usize,
    pub best_average_set: Vec<usize>,
    pub best_average_nmse: f64,
    pub combinations: usize,
    pub samples: usize,
    pub histogram: Vec<f64>,
}

impl SearchSummary {
    fn from_result(r: &DftSearchResult, samples: usize) -> Self {
        Self {
            n_v: r.n_v,
            best_average_set: r.best_average_set.clone(),
            best_average_nmse: r.best_average_nmse,
            combinations: r.combinations,
            samples,
            histogram: r.histogram.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| crate::error::FormatError::Inconsistent(format!("{}: {e}", path.display())).into())
    }
}

/// A dataset together with the key that identifies it.
pub struct LoadedData {
    pub key: String,
    pub dataset: ChannelDataset,
}

impl LoadedData {
    fn composites(&self, range: std::ops::Range<usize>) -> Vec<CMatrix> {
        self.dataset.samples[range].iter().map(|s| s.composite().clone()).collect()
    }
}

#[derive(Serialize)]
struct DatasetKey<'a> {
    scenario: &'a ScenarioConfig,
    train_count: usize,
    test_count: usize,
}

#[derive(Serialize)]
struct GmmKey<'a> {
    data: &'a str,
    seed: u64,
    train_count: usize,
    gmm: &'a GmmSettings,
}

#[derive(Serialize)]
struct CnnKey<'a> {
    data: &'a str,
    seed: u64,
    n_v: usize,
    snr_db: f64,
    train_count: usize,
    validation_fraction: f64,
    train: &'a TrainConfig,
    trials: usize,
    ranges: &'a SearchRanges,
}

#[derive(Serialize)]
struct SearchKey<'a> {
    data: &'a str,
    seed: u64,
    n_v: usize,
    train_count: usize,
    search: &'a SearchSettings,
    /// Set when the search scores with the GMM.
    gmm: Option<&'a GmmSettings>,
}

/// A validated configuration plus the operations on it.
pub struct Experiment {
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn dir(&self) -> &Path {
        &self.config.artifact_dir
    }

    fn scenario_for(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            ..self.config.scenario.clone()
        }
    }

    fn total(&self) -> usize {
        self.config.train_count + self.config.test_count
    }

    /// Path of the generated dataset for `seed`, or `None` for an external file.
    pub fn dataset_artifact(&self, seed: u64) -> Result<Option<PathBuf>> {
        if self.config.dataset_path.is_some() {
            return Ok(None);
        }
        let scenario = self.scenario_for(seed);
        let key = digest(
            "dataset",
            &DatasetKey {
                scenario: &scenario,
                train_count: self.config.train_count,
                test_count: self.config.test_count,
            },
        )?;
        Ok(Some(artifact_path(self.dir(), "dataset", &key, "risd")))
    }

    /// Scale every sample by the factor that normalizes the training part.
    fn normalize_by_training(&self, ds: &ChannelDataset) -> Result<ChannelDataset> {
        let c = channel::normalization_scale(&ds.slice(0..self.config.train_count)?)?;
        Ok(ChannelDataset {
            samples: ds.samples.iter().map(|s| s.scaled(c)).collect(),
            normalized: true,
            ..ds.clone()
        })
    }

    pub fn generate_data(&self) -> Result<String> {
        if let Some(p) = &self.config.dataset_path {
            return Err(Error::Config(format!(
                "dataset_path is set to {}; nothing to generate",
                p.display()
            )));
        }
        ensure_dir(self.dir())?;
        let mut written = 0;
        let mut cached = 0;
        for &seed in &self.config.seeds {
            let path = self.dataset_artifact(seed)?.expect("generated dataset");
            if path.is_file() {
                cached += 1;
                continue;
            }
            let raw = channel::generate(&self.scenario_for(seed), self.total())?;
            channel::save(&self.normalize_by_training(&raw)?, &path)?;
            written += 1;
        }
        Ok(format!(
            "generate-data: {written} written, {cached} cached, {} samples each in {}",
            self.total(),
            self.dir().display()
        ))
    }

    pub fn load_data(&self, seed: u64) -> Result<LoadedData> {
        let (key, mut dataset) = match &self.config.dataset_path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                (digest_bytes(&bytes), channel::decode(&bytes)?)
            }
            None => {
                let path = self.dataset_artifact(seed)?.expect("generated dataset");
                require(&path, "generate-data")?;
                let key = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .trim_start_matches("dataset-")
                    .to_string();
                (key, channel::load(&path)?)
            }
        };
        if dataset.len() < self.total() {
            return Err(Error::Parameter(format!(
                "dataset holds {} samples but train_count + test_count = {}",
                dataset.len(),
                self.total()
            )));
        }
        if !dataset.normalized {
            dataset = self.normalize_by_training(&dataset)?;
        }
        Ok(LoadedData { key, dataset })
    }

    fn dims(&self, data: &LoadedData, n_v: usize) -> Result<SystemDims> {
        SystemDims::new(data.dataset.m, data.dataset.l, n_v)
    }

    fn gmm_artifact(&self, data: &LoadedData, seed: u64) -> Result<PathBuf> {
        let key = digest(
            "gmm",
            &GmmKey {
                data: &data.key,
                seed,
                train_count: self.config.train_count,
                gmm: &self.config.gmm,
            },
        )?;
        Ok(artifact_path(self.dir(), "gmm", &key, "rgmm"))
    }

    pub fn fit_gmm(&self) -> Result<String> {
        ensure_dir(self.dir())?;
        let mut lines = Vec::new();
        for &seed in &self.config.seeds {
            let data = self.load_data(seed)?;
            let path = self.gmm_artifact(&data, seed)?;
            if path.is_file() {
                lines.push(format!("seed {seed}: cached {}", path.display()));
                continue;
            }
            let train: Vec<CVector> = data.composites(0..self.config.train_count).iter().map(vec_of).collect();
            let g = &self.config.gmm;
            let opts = GmmFitOptions {
                max_iter: g.max_iter,
                tol: g.tol,
                ..GmmFitOptions::new(g.components)
            }
            .with_relative_floor(&train, g.relative_floor);
            let mut rng = rng_from_seed(derive_seed(seed, label("gmm-init")));
            let (model, report) = gmm_fit(&train, &opts, &mut rng)?;
            save_gmm(&model, &path)?;
            lines.push(format!(
                "seed {seed}: {} iterations{}, wrote {}",
                report.iterations,
                if report.converged { "" } else { " (not converged)" },
                path.display()
            ));
        }
        Ok(format!("fit-gmm: {}", lines.join("; ")))
    }

    fn load_gmm_for(&self, data: &LoadedData, seed: u64) -> Result<GmmModel> {
        let path = self.gmm_artifact(data, seed)?;
        require(&path, "fit-gmm")?;
        let model = load_gmm(&path)?;
        if model.dim() != data.dataset.channel_dim() {
            return Err(Error::Dimension(format!(
                "GMM in {} has dimension {} but the data has {}",
                path.display(),
                model.dim(),
                data.dataset.channel_dim()
            )));
        }
        Ok(model)
    }

    fn train_config_for(&self, seed: u64, n_v: usize, snr_db: f64) -> TrainConfig {
        TrainConfig {
            snr_db,
            seed: derive_seed(derive_seed(seed, label("cnn-train")), n_v as u64),
            ..self.config.train.clone()
        }
    }

    fn cnn_artifact(&self, data: &LoadedData, seed: u64, n_v: usize, snr_db: f64) -> Result<PathBuf> {
        let train = self.train_config_for(seed, n_v, snr_db);
        let key = digest(
            "cnn",
            &CnnKey {
                data: &data.key,
                seed,
                n_v,
                snr_db,
                train_count: self.config.train_count,
                validation_fraction: self.config.validation_fraction,
                train: &train,
                trials: self.config.hyper_search.trials,
                ranges: &self.config.hyper_search.ranges,
            },
        )?;
        Ok(artifact_path(self.dir(), "cnn", &key, "rcnn"))
    }

    fn sweep_points(&self) -> Vec<(usize, f64)> {
        let mut pts = Vec::new();
        for &n_v in &self.config.sweep.n_v {
            for &snr in &self.config.sweep.snr_db {
                pts.push((n_v, snr));
            }
        }
        pts
    }

    /// Train one joint model per (seed, N_v, SNR) sweep point.
    pub fn train_cnn(&self) -> Result<String> {
        ensure_dir(self.dir())?;
        let mut lines = Vec::new();
        for &seed in &self.config.seeds {
            let data = self.load_data(seed)?;
            let (fit_range, val_range) = self.config.training_split();
            let fit = data.composites(fit_range.clone());
            let val = if val_range.is_empty() { fit.clone() } else { data.composites(val_range) };
            let jobs = self.sweep_points();
            let done: Vec<String> = jobs
                .par_iter()
                .map(|&(n_v, snr)| -> Result<String> {
                    let path = self.cnn_artifact(&data, seed, n_v, snr)?;
                    if path.is_file() {
                        return Ok(format!("seed {seed} N_v={n_v} SNR={snr}: cached"));
                    }
                    let dims = self.dims(&data, n_v)?;
                    let cfg = self.train_config_for(seed, n_v, snr);
                    let trials = self.config.hyper_search.trials;
                    let outcome = if trials > 0 {
                        hyper_search(&fit, &val, dims, &cfg, &self.config.hyper_search.ranges, trials, cfg.seed)?.best
                    } else {
                        train_joint(&fit, &val, dims, &cfg)?
                    };
                    save_checkpoint(&outcome.model, &path)?;
                    write_training_log(&outcome.log, &path.with_extension("log.csv"))?;
                    Ok(format!(
                        "seed {seed} N_v={n_v} SNR={snr}: val NMSE {:.3e}",
                        outcome.final_val_nmse()
                    ))
                })
                .collect::<Result<_>>()?;
            lines.extend(done);
        }
        Ok(format!("train-cnn: {}", lines.join("; ")))
    }

    fn load_cnn_for(&self, data: &LoadedData, seed: u64, n_v: usize, snr_db: f64) -> Result<PhaseCnnModel> {
        let path = match &self.config.learned_checkpoint {
            Some(p) => p.clone(),
            None => self.cnn_artifact(data, seed, n_v, snr_db)?,
        };
        require(&path, "train-cnn")?;
        let model = load_checkpoint(&path)?;
        let want = self.dims(data, n_v)?;
        if model.dims() != want {
            return Err(Error::Dimension(format!(
                "checkpoint {} is for M={}, L={}, N_v={} but the experiment needs M={}, L={}, N_v={}",
                path.display(),
                model.dims().m,
                model.dims().l,
                model.dims().n_v,
                want.m,
                want.l,
                want.n_v
            )));
        }
        Ok(model)
    }

    fn search_artifact(&self, data: &LoadedData, seed: u64, n_v: usize) -> Result<PathBuf> {
        let key = digest(
            "search",
            &SearchKey {
                data: &data.key,
                seed,
                n_v,
                train_count: self.config.train_count,
                search: &self.config.search,
                gmm: (self.config.search.estimator == EstimatorKind::Gmm).then_some(&self.config.gmm),
            },
        )?;
        Ok(artifact_path(self.dir(), "search", &key, "toml"))
    }

    fn search_estimator(&self, data: &LoadedData, seed: u64) -> Result<Box<dyn ChannelEstimator>> {
        Ok(match self.config.search.estimator {
            EstimatorKind::Ls => Box::new(LsEstimator),
            EstimatorKind::SampleCov => Box::new(self.sample_cov(data)?),
            EstimatorKind::Gmm => Box::new(self.load_gmm_for(data, seed)?),
            EstimatorKind::Cnn => return Err(Error::Config("[search] estimator cannot be cnn".into())),
        })
    }

    fn sample_cov(&self, data: &LoadedData) -> Result<SampleCovEstimator> {
        let train: Vec<CVector> = data.composites(0..self.config.train_count).iter().map(vec_of).collect();
        SampleCovEstimator::fit(&train)
    }

    /// Exhaustive search over the first `[search] samples` training channels.
    pub fn run_search(&self, data: &LoadedData, seed: u64, n_v: usize) -> Result<(DftSearchResult, usize)> {
        let s = &self.config.search;
        let count = s.samples.min(self.config.train_count);
        let channels = data.composites(0..count);
        let estimator = self.search_estimator(data, seed)?;
        let mut rng = rng_from_seed(derive_seed(derive_seed(seed, label("dft-search")), n_v as u64));
        let result = exhaustive_dft_search(
            &channels,
            estimator.as_ref(),
            n_v,
            snr_to_noise_variance(s.snr_db),
            &mut rng,
            SearchOptions {
                max_combinations: s.max_combinations as u128,
            },
        )?;
        Ok((result, count))
    }

    pub fn search_dft(&self) -> Result<String> {
        ensure_dir(self.dir())?;
        let mut lines = Vec::new();
        for &seed in &self.config.seeds {
            let data = self.load_data(seed)?;
            for &n_v in &self.config.sweep.n_v {
                let path = self.search_artifact(&data, seed, n_v)?;
                if path.is_file() {
                    lines.push(format!("seed {seed} N_v={n_v}: cached"));
                    continue;
                }
                let (result, count) = self.run_search(&data, seed, n_v)?;
                SearchSummary::from_result(&result, count).save(&path)?;
                lines.push(format!("seed {seed} N_v={n_v}: best set {:?}", result.best_average_set));
            }
        }
        Ok(format!("search-dft: {}", lines.join("; ")))
    }

    /// Histogram of the exhaustive search for the first seed.
    pub fn histogram(&self, out: &Path) -> Result<String> {
        let seed = self.config.seeds[0];
        let data = self.load_data(seed)?;
        let (result, count) = self.run_search(&data, seed, self.config.histogram.n_v)?;
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        write_histogram_csv(&result.histogram, out)?;
        let side = out.with_extension("best.toml");
        SearchSummary::from_result(&result, count).save(&side)?;
        Ok(format!(
            "histogram: {} combinations over {count} samples, best average set {:?} (NMSE {:.3e}); wrote {} and {}",
            result.combinations,
            result.best_average_set,
            result.best_average_nmse,
            out.display(),
            side.display()
        ))
    }

    fn phase_book(
        &self,
        strategy: Strategy,
        data: &LoadedData,
        seed: u64,
        n_v: usize,
        learned: Option<&PhaseCnnModel>,
    ) -> Result<PhaseMatrix> {
        let l = data.dataset.l;
        match strategy {
            Strategy::DftSub => dft_submatrix(l, n_v),
            Strategy::Random => {
                let mut rng = rng_from_seed(derive_seed(derive_seed(seed, label("random-phases")), n_v as u64));
                random_phases(l, n_v, &mut rng)
            }
            Strategy::DftSearch => {
                let path = self.search_artifact(data, seed, n_v)?;
                require(&path, "search-dft")?;
                let summary = SearchSummary::load(&path)?;
                dft_column_subset(l, &summary.best_average_set)
            }
            Strategy::Learned => Ok(learned.expect("learned model loaded").export_phases()),
        }
    }

    /// Evaluate every (strategy, estimator, sweep point, seed). Test noise is
    /// drawn per (seed, N_v, sample) and shared by all strategies and estimators.
    pub fn evaluate(&self) -> Result<Vec<ResultRecord>> {
        let cfg = &self.config;
        let test_range = cfg.test_range();
        let mut records = Vec::new();
        for &seed in &cfg.seeds {
            let data = self.load_data(seed)?;
            let test = data.composites(test_range.clone());
            let sample_cov = if cfg.estimators.contains(&EstimatorKind::SampleCov) {
                Some(self.sample_cov(&data)?)
            } else {
                None
            };
            let gmm = if cfg.estimators.contains(&EstimatorKind::Gmm) {
                Some(self.load_gmm_for(&data, seed)?)
            } else {
                None
            };
            let points = self.sweep_points();
            let per_point: Vec<Vec<ResultRecord>> = points
                .par_iter()
                .map(|&(n_v, snr)| {
                    self.evaluate_point(&data, &test, seed, n_v, snr, sample_cov.as_ref(), gmm.as_ref())
                })
                .collect::<Result<_>>()?;
            records.extend(per_point.into_iter().flatten());
        }
        records.sort_by(|a, b| {
            (a.strategy, a.estimator, a.n_v)
                .cmp(&(b.strategy, b.estimator, b.n_v))
                .then(a.snr_db.total_cmp(&b.snr_db))
                .then(a.seed.cmp(&b.seed))
        });
        Ok(records)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_point(
        &self,
        data: &LoadedData,
        test: &[CMatrix],
        seed: u64,
        n_v: usize,
        snr_db: f64,
        sample_cov: Option<&SampleCovEstimator>,
        gmm: Option<&GmmModel>,
    ) -> Result<Vec<ResultRecord>> {
        let cfg = &self.config;
        let m = data.dataset.m;
        let sigma2 = snr_to_noise_variance(snr_db);
        let noise_seed = derive_seed(seed, n_v as u64);
        let scale = C64::new(sigma2.sqrt(), 0.0);
        let noises: Vec<CMatrix> = (0..test.len() as u64)
            .into_par_iter()
            .map(|i| noise_matrix(m, n_v, 1.0, &mut item_rng(noise_seed, label("test-noise"), i)) * scale)
            .collect();
        let mut out = Vec::new();
        for &strategy in &cfg.strategies {
            let learned = if strategy == Strategy::Learned {
                Some(self.load_cnn_for(data, seed, n_v, snr_db)?)
            } else {
                None
            };
            let v = self.phase_book(strategy, data, seed, n_v, learned.as_ref())?;
            let ys: Vec<CVector> = test.iter().zip(&noises).map(|(h, n)| vec_of(&(h * v.matrix() + n))).collect();
            for &kind in &cfg.estimators {
                let estimates: Vec<CVector> = match kind {
                    EstimatorKind::Cnn => match &learned {
                        Some(model) => model.prepare_cnn(&v)?.estimate_many(&ys)?,
                        None => continue,
                    },
                    _ => {
                        let est: &dyn ChannelEstimator = match kind {
                            EstimatorKind::Ls => &LsEstimator,
                            EstimatorKind::SampleCov => sample_cov.expect("fitted when requested"),
                            EstimatorKind::Gmm => gmm.expect("loaded when requested"),
                            EstimatorKind::Cnn => unreachable!(),
                        };
                        if kind == EstimatorKind::Ls && n_v < data.dataset.l + 1 {
                            eprintln!(
                                "note: LS with {} and N_v={n_v} < L+1={} is under-determined",
                                strategy.name(),
                                data.dataset.l + 1
                            );
                        }
                        let prepared = est.prepare(&v, sigma2)?;
                        ys.par_iter().map(|y| prepared.estimate(y)).collect::<Result<_>>()?
                    }
                };
                let est_mats: Vec<CMatrix> = estimates
                    .iter()
                    .map(|e| CMatrix::from_column_slice(m, data.dataset.l + 1, e.as_slice()))
                    .collect();
                out.push(ResultRecord {
                    strategy,
                    estimator: kind,
                    snr_db,
                    n_v,
                    nmse: nmse(test, &est_mats)?,
                    samples: test.len(),
                    seed,
                });
            }
        }
        Ok(out)
    }

    pub fn write_results(&self, records: &[ResultRecord], out: &Path) -> Result<()> {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        std::fs::write(out, results_csv(records)).map_err(|e| Error::io(out, e))
    }
}
