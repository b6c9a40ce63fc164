//! Channel estimators behind one interface: given `y = vec(Y)`, the phase
//! book `V` and the noise variance, return `ĥ = vec(Ĥ)` of length `M (L+1)`.
//!
//! Everything that depends only on `(V, σ²)` is computed once in
//! [`ChannelEstimator::prepare`]; the returned [`PreparedEstimator`] is then
//! applied per observation.

mod gmm;
mod lmmse;
mod ls;

pub use gmm::{
    decode_gmm, encode_gmm, gmm_estimate, gmm_fit, gmm_responsibilities, load_gmm, save_gmm, GmmFitOptions, GmmFitReport, GmmModel, PreparedGmm, GMM_MAGIC,
};
pub use lmmse::{lmmse_sample_cov_estimate, sample_covariance, PreparedLmmse, SampleCovEstimator};
pub use ls::{ls_estimate, LsEstimator, PreparedLs};

use crate::error::{Error, Result};
use crate::linalg::{unvec, CMatrix, CVector};
use crate::model::PhaseMatrix;

pub trait ChannelEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn prepare(&self, v: &PhaseMatrix, sigma2: f64) -> Result<Box<dyn PreparedEstimator>>;

    fn estimate(&self, y: &CVector, v: &PhaseMatrix, sigma2: f64) -> Result<CVector> {
        self.prepare(v, sigma2)?.estimate(y)
    }
}

pub trait PreparedEstimator: Send + Sync {
    fn estimate(&self, y: &CVector) -> Result<CVector>;

    /// `L + 1`, the number of composite channel columns.
    fn channel_cols(&self) -> usize;

    /// Estimate reshaped to `M x (L+1)`.
    fn estimate_matrix(&self, y: &CVector) -> Result<CMatrix> {
        let h = self.estimate(y)?;
        let cols = self.channel_cols();
        unvec(&h, h.len() / cols, cols)
    }
}

/// BS antenna count implied by an observation of length `M N_v`.
pub(crate) fn antennas_from_observation(len: usize, n_v: usize) -> Result<usize> {
    if n_v == 0 || !len.is_multiple_of(n_v) || len == 0 {
        return Err(Error::Dimension(format!(
            "observation length {len} is not a positive multiple of N_v = {n_v}"
        )));
    }
    Ok(len / n_v)
}

/// BS antenna count implied by a channel dimension `M (L+1)`.
pub(crate) fn antennas_from_channel(dim: usize, cols: usize) -> Result<usize> {
    if cols == 0 || !dim.is_multiple_of(cols) || dim == 0 {
        return Err(Error::Dimension(format!(
            "channel dimension {dim} is not a positive multiple of L+1 = {cols}"
        )));
    }
    Ok(dim / cols)
}

pub(crate) fn check_noise(sigma2: f64) -> Result<()> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Parameter(format!(
            "noise variance must be finite and nonnegative, got {sigma2}"
        )));
    }
    Ok(())
}

pub(crate) fn check_len(y: &CVector, expected: usize) -> Result<()> {
    if y.len() != expected {
        return Err(Error::Dimension(format!(
            "observation has length {}, expected {expected}",
            y.len()
        )));
    }
    Ok(())
}
