use crate::error::Result;
use crate::linalg::{pinv, unvec, vec_of, CMatrix, CVector};
use crate::model::PhaseMatrix;

use super::{antennas_from_observation, check_noise, ChannelEstimator, PreparedEstimator};

/// Least squares `ĥ = A^† y = ((V^†)^T ⊗ I) y`, evaluated as `vec(Y V^†)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LsEstimator;

#[derive(Debug, Clone)]
pub struct PreparedLs {
    /// `V^†`, shape `N_v x (L+1)`.
    pinv: CMatrix,
    rank: usize,
}

impl PreparedLs {
    pub fn new(v: &PhaseMatrix) -> Result<Self> {
        let (p, rank) = pinv(v.matrix())?;
        Ok(Self {
            pinv: p,
            rank,
        })
    }

    /// Numerical rank of `V`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// True when `V` cannot identify all `L+1` channel columns.
    pub fn under_determined(&self) -> bool {
        self.rank < self.pinv.ncols()
    }
}

impl PreparedEstimator for PreparedLs {
    fn estimate(&self, y: &CVector) -> Result<CVector> {
        let n_v = self.pinv.nrows();
        let m = antennas_from_observation(y.len(), n_v)?;
        let y_mat = unvec(y, m, n_v)?;
        Ok(vec_of(&(y_mat * &self.pinv)))
    }

    fn channel_cols(&self) -> usize {
        self.pinv.ncols()
    }
}

impl ChannelEstimator for LsEstimator {
    fn name(&self) -> &'static str {
        "ls"
    }

    fn prepare(&self, v: &PhaseMatrix, sigma2: f64) -> Result<Box<dyn PreparedEstimator>> {
        check_noise(sigma2)?;
        Ok(Box::new(PreparedLs::new(v)?))
    }
}

pub fn ls_estimate(y: &CVector, v: &PhaseMatrix) -> Result<CVector> {
    PreparedLs::new(v)?.estimate(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_normal, max_abs_diff, C64};
    use crate::model::build_observation_matrix;
    use crate::rng::rng_from_seed;

    fn random_phases(rows: usize, cols: usize, seed: u64) -> PhaseMatrix {
        let mut rng = rng_from_seed(seed);
        PhaseMatrix::new(CMatrix::from_fn(rows, cols, |r, _| {
            if r == 0 {
                C64::new(1.0, 0.0)
            } else {
                let z = complex_normal(&mut rng, 1.0);
                z / z.norm()
            }
        }))
        .unwrap()
    }

    #[test]
    fn matches_full_observation_matrix_pseudoinverse() {
        let (m, l, n_v) = (2, 2, 2);
        let v = random_phases(l + 1, n_v, 1);
        let mut rng = rng_from_seed(2);
        let y = CVector::from_fn(m * n_v, |_, _| complex_normal(&mut rng, 1.0));
        let a = build_observation_matrix(v.matrix(), m);
        let svd = nalgebra::SVD::new(a.clone(), true, true);
        let a_pinv = svd.pseudo_inverse(1e-12).unwrap();
        let oracle = a_pinv * &y;
        let est = ls_estimate(&y, &v).unwrap();
        assert!(max_abs_diff(est.as_slice(), oracle.as_slice()) < 1e-12);
        let prepared = PreparedLs::new(&v).unwrap();
        assert!(prepared.under_determined());
        assert_eq!(prepared.rank(), 2);
    }

    #[test]
    fn rejects_misshaped_observation() {
        let v = random_phases(3, 2, 3);
        assert!(ls_estimate(&CVector::zeros(5), &v).is_err());
    }
}
