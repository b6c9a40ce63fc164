use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, CMatrix, CVector, HermitianFactor, C64};
use crate::model::{build_observation_matrix, PhaseMatrix};

use super::{antennas_from_channel, check_len, check_noise, ChannelEstimator, PreparedEstimator};

/// Cell-wide second moment `C = (1/N) Σ h_n h_n^H` (no mean removal).
pub fn sample_covariance(samples: &[CVector]) -> Result<CMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Parameter("sample covariance of an empty set".into()))?;
    let d = first.len();
    if let Some(i) = samples.iter().position(|h| h.len() != d) {
        return Err(Error::Dimension(format!(
            "sample {i} has length {}, expected {d}",
            samples[i].len()
        )));
    }
    let data = CMatrix::from_fn(d, samples.len(), |i, n| samples[n][i]);
    let c = &data * data.adjoint() * C64::new(1.0 / samples.len() as f64, 0.0);
    Ok(hermitian_part(&c))
}

/// LMMSE estimator with a fixed covariance, `ĥ = C A^H (A C A^H + σ² I)^{-1} y`.
#[derive(Debug, Clone)]
pub struct SampleCovEstimator {
    cov: CMatrix,
}

impl SampleCovEstimator {
    pub fn new(cov: CMatrix) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "covariance must be square and non-empty, got {:?}",
                cov.shape()
            )));
        }
        Ok(Self { cov })
    }

    pub fn fit(samples: &[CVector]) -> Result<Self> {
        Self::new(sample_covariance(samples)?)
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.cov
    }
}

#[derive(Debug, Clone)]
pub struct PreparedLmmse {
    gain: CMatrix,
    cols: usize,
}

/// `C A^H (A C A^H + σ² I)^{-1}` for a Hermitian `C`.
pub(crate) fn lmmse_gain(
    cov: &CMatrix,
    a: &CMatrix,
    sigma2: f64,
) -> Option<(CMatrix, HermitianFactor)> {
    let ac = a * cov;
    let mut cy = &ac * a.adjoint();
    for i in 0..cy.nrows() {
        cy[(i, i)] += sigma2;
    }
    let factor = HermitianFactor::new(&cy)?;
    // (Cy^{-1} A C)^H = C A^H Cy^{-1}
    let gain = factor.solve(&ac).adjoint();
    Some((gain, factor))
}

impl PreparedLmmse {
    pub fn new(cov: &CMatrix, v: &PhaseMatrix, sigma2: f64) -> Result<Self> {
        check_noise(sigma2)?;
        let cols = v.rows();
        let m = antennas_from_channel(cov.nrows(), cols)?;
        let a = build_observation_matrix(v.matrix(), m);
        let (gain, _) = lmmse_gain(cov, &a, sigma2).ok_or_else(|| {
            Error::Numerical(format!(
                "A C A^H + σ² I is not positive definite (σ² = {sigma2})"
            ))
        })?;
        Ok(Self { gain, cols })
    }
}

impl PreparedEstimator for PreparedLmmse {
    fn estimate(&self, y: &CVector) -> Result<CVector> {
        check_len(y, self.gain.ncols())?;
        Ok(&self.gain * y)
    }

    fn channel_cols(&self) -> usize {
        self.cols
    }
}

impl ChannelEstimator for SampleCovEstimator {
    fn name(&self) -> &'static str {
        "sample_cov"
    }

    fn prepare(&self, v: &PhaseMatrix, sigma2: f64) -> Result<Box<dyn PreparedEstimator>> {
        Ok(Box::new(PreparedLmmse::new(&self.cov, v, sigma2)?))
    }
}

pub fn lmmse_sample_cov_estimate(
    y: &CVector,
    v: &PhaseMatrix,
    sigma2: f64,
    cov: &CMatrix,
) -> Result<CVector> {
    PreparedLmmse::new(cov, v, sigma2)?.estimate(y)
}
