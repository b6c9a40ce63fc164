use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ONE};
use crate::model::PhaseMatrix;

/// Trainable phase book `V_NN = cos(Φ) + j sin(Φ)` with real angles `Φ`.
///
/// With `first_row_locked` the direct-path row is pinned to 1 and receives no
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLayer {
    pub phi: DMatrix<f64>,
    pub first_row_locked: bool,
}

impl PhaseLayer {
    pub fn new(phi: DMatrix<f64>, first_row_locked: bool) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::Dimension("phase angles must be non-empty".into()));
        }
        if phi.iter().any(|a| !a.is_finite()) {
            return Err(Error::Parameter("phase angles must be finite".into()));
        }
        Ok(Self {
            phi,
            first_row_locked,
        })
    }

    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.phi.ncols()
    }

    pub fn forward(&self) -> CMatrix {
        phase_forward(&self.phi, self.first_row_locked)
    }

    pub fn backward(&self, grad_re: &DMatrix<f64>, grad_im: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        phase_backward(&self.phi, grad_re, grad_im, self.first_row_locked)
    }

    /// Phase book usable by any estimator. An unlocked first row is removed by
    /// rotating each column by `conj(V[0, n])`, which only changes the pilot's
    /// common phase per transmission.
    pub fn export_phases(&self) -> PhaseMatrix {
        let mut v = self.forward();
        if !self.first_row_locked {
            for n in 0..v.ncols() {
                let rot = v[(0, n)].conj();
                for m in 0..v.nrows() {
                    v[(m, n)] *= rot;
                }
                v[(0, n)] = ONE;
            }
        }
        PhaseMatrix::new(v).expect("cos/sin parameterization is unit modulus")
    }
}

/// Elementwise `cos Φ + j sin Φ`; row 0 is forced to 1 when `lock_first_row`.
pub fn phase_forward(phi: &DMatrix<f64>, lock_first_row: bool) -> CMatrix {
    CMatrix::from_fn(phi.nrows(), phi.ncols(), |m, n| {
        if lock_first_row && m == 0 {
            ONE
        } else {
            let (s, c) = phi[(m, n)].sin_cos();
            C64::new(c, s)
        }
    })
}

/// `∂L/∂Φ = -sin Φ ⊙ ∂L/∂Re V + cos Φ ⊙ ∂L/∂Im V`, zero on a locked first row.
pub fn phase_backward(
    phi: &DMatrix<f64>,
    grad_re: &DMatrix<f64>,
    grad_im: &DMatrix<f64>,
    lock_first_row: bool,
) -> Result<DMatrix<f64>> {
    if grad_re.shape() != phi.shape() || grad_im.shape() != phi.shape() {
        return Err(Error::Dimension(format!(
            "phase gradient shapes {:?}/{:?} do not match angles {:?}",
            grad_re.shape(),
            grad_im.shape(),
            phi.shape()
        )));
    }
    Ok(DMatrix::from_fn(phi.nrows(), phi.ncols(), |m, n| {
        if lock_first_row && m == 0 {
            0.0
        } else {
            let (s, c) = phi[(m, n)].sin_cos();
            -s * grad_re[(m, n)] + c * grad_im[(m, n)]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_angles_give_ones() {
        let v = phase_forward(&DMatrix::zeros(3, 2), false);
        assert!(v.iter().all(|z| *z == ONE));
    }

    #[test]
    fn quarter_turn_is_j() {
        let mut phi = DMatrix::zeros(2, 2);
        phi[(1, 0)] = FRAC_PI_2;
        let v = phase_forward(&phi, true);
        assert!((v[(1, 0)] - C64::new(0.0, 1.0)).norm() < 1e-16);
    }

    #[test]
    fn unit_modulus_for_large_angles() {
        let phi = DMatrix::from_fn(5, 4, |m, n| 1e3 * (m as f64 + 0.37) * (n as f64 - 1.3));
        let v = phase_forward(&phi, false);
        assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn backward_basic_directions() {
        let phi = DMatrix::zeros(2, 1);
        let ones = DMatrix::from_element(2, 1, 1.0);
        let zeros = DMatrix::zeros(2, 1);
        let g = phase_backward(&phi, &ones, &zeros, false).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
        let g = phase_backward(&phi, &zeros, &ones, false).unwrap();
        assert!(g.iter().all(|x| *x == 1.0));
        let g = phase_backward(&phi, &zeros, &ones, true).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert!(phase_backward(&phi, &DMatrix::zeros(1, 1), &zeros, false).is_err());
    }

    #[test]
    fn export_rotates_unlocked_first_row() {
        let phi = DMatrix::from_fn(3, 2, |m, n| 0.3 * m as f64 + 0.7 * n as f64 + 0.1);
        let layer = PhaseLayer::new(phi, false).unwrap();
        let exported = layer.export_phases();
        let raw = layer.forward();
        for n in 0..2 {
            assert_eq!(exported.matrix()[(0, n)], ONE);
            for m in 0..3 {
                let expect = raw[(m, n)] * raw[(0, n)].conj();
                assert!((exported.matrix()[(m, n)] - expect).norm() < 1e-15);
            }
        }
    }
}
