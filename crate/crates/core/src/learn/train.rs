//! Minibatch training of the joint model and random hyper-parameter search.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::cnn::{Activation, Architecture};
use super::joint::PhaseCnnModel;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{nmse, noise_matrix, snr_to_noise_variance, SystemDims};
use crate::rng::{derive_seed, label, rng_from_seed, Rng as ChaRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the initial rate to zero over all steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Training SNR in dB.
    pub snr_db: f64,
    /// When set, each minibatch draws its SNR uniformly from this range instead.
    pub snr_range_db: Option<[f64; 2]>,
    pub schedule: LrSchedule,
    pub architecture: Architecture,
    pub first_row_locked: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-2,
            epochs: 25,
            snr_db: 20.0,
            snr_range_db: None,
            schedule: LrSchedule::Cosine,
            architecture: Architecture {
                kernels: 16,
                layers: 6,
                activation: Activation::Relu,
                batch_norm: true,
            },
            first_row_locked: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        // Zero is accepted so a run can be checked to leave parameters untouched.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Parameter("training SNR must be finite".into()));
        }
        if let Some([lo, hi]) = self.snr_range_db {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Parameter(format!("bad SNR range [{lo}, {hi}]")));
            }
        }
        if self.architecture.layers > 0 && self.architecture.kernels == 0 {
            return Err(Error::Parameter("kernels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PhaseCnnModel,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_val_nmse(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.val_nmse)
    }
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_nmse\n");
    for e in log {
        let _ = writeln!(s, "{},{:e},{:e}", e.epoch, e.train_loss, e.val_nmse);
    }
    s
}

pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    std::fs::write(path, training_log_csv(log)).map_err(|e| Error::io(path, e))
}

/// NMSE of the model on `channels` at its training SNR with noise drawn from `seed`.
pub fn evaluate_model(model: &PhaseCnnModel, channels: &[CMatrix], snr_db: f64, seed: u64) -> Result<f64> {
    let dims = model.dims();
    let sigma2 = snr_to_noise_variance(snr_db);
    let v = model.phase.forward();
    let mut est = Vec::with_capacity(channels.len());
    for (chunk_idx, chunk) in channels.chunks(256).enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, chunk_idx as u64));
        let ys: Vec<CMatrix> = chunk
            .iter()
            .map(|h| h * &v + noise_matrix(dims.m, dims.n_v, sigma2, &mut rng))
            .collect();
        est.extend(model.estimate_batch(&ys)?);
    }
    nmse(channels, &est)
}

fn check_channels(channels: &[CMatrix], dims: SystemDims, what: &str) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::Parameter(format!("{what} set is empty")));
    }
    if let Some(h) = channels.iter().find(|h| h.shape() != (dims.m, dims.l + 1)) {
        return Err(Error::Dimension(format!(
            "{what} channel is {:?}, expected {}x{}",
            h.shape(),
            dims.m,
            dims.l + 1
        )));
    }
    Ok(())
}

/// Train Φ and the CNN jointly. `train` and `validation` are composite
/// channels from disjoint sample sets.
pub fn train_joint(
    train: &[CMatrix],
    validation: &[CMatrix],
    dims: SystemDims,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_channels(train, dims, "training")?;
    check_channels(validation, dims, "validation")?;
    let mut rng = rng_from_seed(config.seed);
    let model = PhaseCnnModel::random(dims, &config.architecture, config.first_row_locked, config.snr_db, &mut rng)?;
    train_from(model, train, validation, config, &mut rng)
}

/// Continue training an existing model.
pub fn train_from(
    mut model: PhaseCnnModel,
    train: &[CMatrix],
    validation: &[CMatrix],
    config: &TrainConfig,
    rng: &mut ChaRng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = model.dims();
    let val_seed = derive_seed(config.seed, label("validation"));
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let snr = match config.snr_range_db {
                Some([lo, hi]) if hi > lo => rng.random_range(lo..=hi),
                Some([lo, _]) => lo,
                None => config.snr_db,
            };
            let sigma2 = snr_to_noise_variance(snr);
            let hs: Vec<CMatrix> = batch.iter().map(|&i| train[i].clone()).collect();
            let ns: Vec<CMatrix> = batch.iter().map(|_| noise_matrix(dims.m, dims.n_v, sigma2, rng)).collect();
            let (loss, grads) = model.loss_and_gradients(&hs, &ns, true)?;
            let grads_finite = grads.phi.iter().all(|g| g.is_finite())
                && grads.cnn.tensors().iter().all(|t| t.iter().all(|g| g.is_finite()));
            if !loss.is_finite() || !grads_finite {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite loss or gradient at step {}", step + 1),
                });
            }
            opt.learning_rate = match config.schedule {
                LrSchedule::Constant => config.learning_rate,
                LrSchedule::Cosine => {
                    let t = step as f64 / total_steps as f64;
                    0.5 * config.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
                }
            };
            model.apply_gradients(&mut opt, &grads);
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let val_nmse = evaluate_model(&model, validation, config.snr_db, val_seed)?;
        if !val_nmse.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "validation NMSE is not finite".into(),
            });
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_nmse,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Ranges for the random hyper-parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchRanges {
    /// Inclusive range of `log2(batch size)`.
    pub batch_log2: [u32; 2],
    /// Learning rate, sampled log-uniformly.
    pub learning_rate: [f64; 2],
    pub kernels: [usize; 2],
    pub layers: [usize; 2],
    pub activations: Vec<Activation>,
    pub batch_norm: Vec<bool>,
}

impl Default for SearchRanges {
    fn default() -> Self {
        Self {
            batch_log2: [5, 11],
            learning_rate: [1e-5, 1e-1],
            kernels: [16, 512],
            layers: [3, 9],
            activations: Activation::SEARCHABLE.to_vec(),
            batch_norm: vec![false, true],
        }
    }
}

impl SearchRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_log2[0] <= self.batch_log2[1]
            && self.batch_log2[1] < 32
            && self.learning_rate[0] > 0.0
            && self.learning_rate[0] <= self.learning_rate[1]
            && self.learning_rate[1].is_finite()
            && self.kernels[0] >= 1
            && self.kernels[0] <= self.kernels[1]
            && self.layers[0] <= self.layers[1]
            && !self.activations.is_empty()
            && !self.batch_norm.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("hyper-parameter search ranges are empty or inverted".into()))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, base: &TrainConfig, rng: &mut R) -> TrainConfig {
        let (lo, hi) = (self.learning_rate[0].ln(), self.learning_rate[1].ln());
        let lr = if hi > lo { rng.random_range(lo..hi).exp() } else { self.learning_rate[0] };
        TrainConfig {
            batch_size: 1 << rng.random_range(self.batch_log2[0]..=self.batch_log2[1]),
            learning_rate: lr,
            architecture: Architecture {
                kernels: rng.random_range(self.kernels[0]..=self.kernels[1]),
                layers: rng.random_range(self.layers[0]..=self.layers[1]),
                activation: self.activations[rng.random_range(0..self.activations.len())],
                batch_norm: self.batch_norm[rng.random_range(0..self.batch_norm.len())],
            },
            seed: rng.random(),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub config: TrainConfig,
    /// Final validation NMSE, or the reason the trial failed.
    pub result: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_config: TrainConfig,
    pub best: TrainOutcome,
    pub trials: Vec<TrialRecord>,
}

/// Train every config and keep the lowest final validation NMSE. Failed trials
/// are recorded and skipped; ties keep the earlier trial.
pub fn run_trials(
    train: &[CMatrix],
    validation: &[CMatrix],
    dims: SystemDims,
    configs: &[TrainConfig],
) -> Result<SearchOutcome> {
    if configs.is_empty() {
        return Err(Error::Parameter("at least one trial is required".into()));
    }
    let mut best: Option<(TrainConfig, TrainOutcome)> = None;
    let mut trials = Vec::with_capacity(configs.len());
    for cfg in configs {
        match train_joint(train, validation, dims, cfg) {
            Ok(outcome) => {
                let score = outcome.final_val_nmse();
                trials.push(TrialRecord {
                    config: cfg.clone(),
                    result: Ok(score),
                });
                if best.as_ref().is_none_or(|(_, b)| score < b.final_val_nmse()) {
                    best = Some((cfg.clone(), outcome));
                }
            }
            Err(e @ (Error::Training { .. } | Error::Numerical(_))) => trials.push(TrialRecord {
                config: cfg.clone(),
                result: Err(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let (best_config, best) = best.ok_or_else(|| Error::Training {
        epoch: 0,
        reason: format!("all {} trials diverged", configs.len()),
    })?;
    Ok(SearchOutcome {
        best_config,
        best,
        trials,
    })
}

/// Random search: `trials` configs sampled from `ranges` (other fields from
/// `base`), deterministic given `seed`.
pub fn hyper_search(
    train: &[CMatrix],
    validation: &[CMatrix],
    dims: SystemDims,
    base: &TrainConfig,
    ranges: &SearchRanges,
    trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    ranges.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, label("hyper-search")));
    let configs: Vec<TrainConfig> = (0..trials).map(|_| ranges.sample(base, &mut rng)).collect();
    run_trials(train, validation, dims, &configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::complex_normal;

    fn channels(n: usize, m: usize, cols: usize, seed: u64) -> Vec<CMatrix> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| CMatrix::from_fn(m, cols, |_, _| complex_normal(&mut rng, 1.0)))
            .collect()
    }

    fn small(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 3e-3,
            epochs: 2,
            snr_db: 10.0,
            architecture: Architecture {
                kernels: 4,
                layers: 2,
                activation: Activation::Tanh,
                batch_norm: false,
            },
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let (tr, va) = (channels(32, 2, 4, 1), channels(8, 2, 4, 2));
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small(5)
        };
        let mut rng = rng_from_seed(cfg.seed);
        let initial =
            PhaseCnnModel::random(dims, &cfg.architecture, cfg.first_row_locked, cfg.snr_db, &mut rng).unwrap();
        let out = train_joint(&tr, &va, dims, &cfg).unwrap();
        assert_eq!(out.model, initial);
    }

    #[test]
    fn training_is_reproducible_without_batch_norm() {
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let (tr, va) = (channels(32, 2, 4, 1), channels(8, 2, 4, 2));
        let a = train_joint(&tr, &va, dims, &small(9)).unwrap();
        let b = train_joint(&tr, &va, dims, &small(9)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(training_log_csv(&a.log).lines().next(), Some("epoch,train_loss,val_nmse"));
    }

    #[test]
    fn overfits_one_sample() {
        let dims = SystemDims::new(2, 3, 4).unwrap();
        let tr = channels(1, 2, 4, 3);
        let cfg = TrainConfig {
            batch_size: 1,
            learning_rate: 1e-3,
            epochs: 50,
            snr_db: 400.0,
            schedule: LrSchedule::Constant,
            ..small(4)
        };
        let out = train_joint(&tr, &tr, dims, &cfg).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{:?}", out.log);
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let (tr, va) = (channels(16, 2, 4, 1), channels(4, 2, 4, 2));
        let cfg = TrainConfig {
            learning_rate: 1e200,
            schedule: LrSchedule::Constant,
            ..small(3)
        };
        assert!(matches!(train_joint(&tr, &va, dims, &cfg), Err(Error::Training { .. })));
    }

    #[test]
    fn diverged_trial_is_skipped() {
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let (tr, va) = (channels(16, 2, 4, 1), channels(4, 2, 4, 2));
        let bad = TrainConfig {
            learning_rate: 1e200,
            schedule: LrSchedule::Constant,
            ..small(3)
        };
        let out = run_trials(&tr, &va, dims, &[bad, small(4)]).unwrap();
        assert_eq!(out.best_config, small(4));
        assert!(out.trials[0].result.is_err());
        let single = run_trials(&tr, &va, dims, &[small(6)]).unwrap();
        assert_eq!(single.best_config, small(6));
    }

    #[test]
    fn search_is_deterministic() {
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let (tr, va) = (channels(16, 2, 4, 1), channels(4, 2, 4, 2));
        let ranges = SearchRanges {
            batch_log2: [2, 3],
            kernels: [2, 4],
            layers: [1, 2],
            ..SearchRanges::default()
        };
        let base = TrainConfig { epochs: 1, ..small(0) };
        let a = hyper_search(&tr, &va, dims, &base, &ranges, 3, 11).unwrap();
        let b = hyper_search(&tr, &va, dims, &base, &ranges, 3, 11).unwrap();
        assert_eq!(a.best_config, b.best_config);
    }

    #[test]
    fn sampled_configs_respect_ranges() {
        let ranges = SearchRanges::default();
        let mut rng = rng_from_seed(1);
        for _ in 0..500 {
            let c = ranges.sample(&TrainConfig::default(), &mut rng);
            assert!((32..=2048).contains(&c.batch_size) && c.batch_size.is_power_of_two());
            assert!((1e-5..=1e-1).contains(&c.learning_rate));
            assert!((16..=512).contains(&c.architecture.kernels));
            assert!((3..=9).contains(&c.architecture.layers));
            assert_ne!(c.architecture.activation, Activation::Identity);
        }
    }
}
