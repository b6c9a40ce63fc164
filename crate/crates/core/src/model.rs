//! System dimensions, channel samples, phase matrices and the pilot observation model
//! `Y = H V + N`, `y = (V^T ⊗ I_M) vec(H) + n`.

use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{complex_normal, frobenius_sq, kron, vec_of, CMatrix, CVector, C64, ONE};

/// Unit-modulus tolerance used when validating phase matrices.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SystemDims {
    /// BS antennas.
    pub m: usize,
    /// RIS elements.
    pub l: usize,
    /// Phase allocations (pilot transmissions).
    pub n_v: usize,
}

impl SystemDims {
    pub fn new(m: usize, l: usize, n_v: usize) -> Result<Self> {
        if m == 0 || l == 0 || n_v == 0 {
            return Err(Error::Parameter(format!(
                "system dimensions must be positive, got M={m}, L={l}, N_v={n_v}"
            )));
        }
        Ok(Self { m, l, n_v })
    }

    /// Length of `vec(H)`: `M (L + 1)`.
    pub fn channel_dim(&self) -> usize {
        self.m * (self.l + 1)
    }

    /// Length of `vec(Y)`: `M N_v`.
    pub fn observation_dim(&self) -> usize {
        self.m * self.n_v
    }

    pub fn with_n_v(self, n_v: usize) -> Result<Self> {
        Self::new(self.m, self.l, n_v)
    }
}

/// One channel realization: direct path, MT-RIS path, RIS-BS path and the
/// composite `H = [h0, h1^T ⊛ H2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h0: CVector,
    pub h1: CVector,
    pub h2: CMatrix,
    composite: CMatrix,
}

impl ChannelSample {
    pub fn new(h0: CVector, h1: CVector, h2: CMatrix) -> Result<Self> {
        let composite = assemble_composite(&h0, &h1, &h2)?;
        Ok(Self {
            h0,
            h1,
            h2,
            composite,
        })
    }

    pub fn composite(&self) -> &CMatrix {
        &self.composite
    }

    /// `vec(H)`.
    pub fn vectorized(&self) -> CVector {
        vec_of(&self.composite)
    }

    pub fn m(&self) -> usize {
        self.h0.len()
    }

    pub fn l(&self) -> usize {
        self.h1.len()
    }

    /// Scale all three constituent channels so the composite scales by `c`.
    /// `h0` and `H2` are scaled by `c`, `h1` is left alone.
    pub fn scaled(&self, c: f64) -> Self {
        let s = C64::new(c, 0.0);
        let h0 = &self.h0 * s;
        let h2 = &self.h2 * s;
        // Rebuilt rather than scaled so a decoded sample compares bit-equal.
        let composite = assemble_composite(&h0, &self.h1, &h2).expect("shapes unchanged by scaling");
        Self {
            h0,
            h1: self.h1.clone(),
            h2,
            composite,
        }
    }
}

/// Khatri-Rao composition `H = [h0, h1^T ⊛ H2]`.
pub fn assemble_composite(h0: &CVector, h1: &CVector, h2: &CMatrix) -> Result<CMatrix> {
    let m = h0.len();
    let l = h1.len();
    dim_check(h2.shape() == (m, l), || {
        format!("H2 must be {m}x{l} to match h0 and h1, got {:?}", h2.shape())
    })?;
    let mut h = CMatrix::zeros(m, l + 1);
    h.set_column(0, h0);
    for ell in 0..l {
        let col = h2.column(ell) * h1[ell];
        h.set_column(ell + 1, &col);
    }
    Ok(h)
}

/// A unit-modulus phase allocation book `V` of shape `(L+1) x N_v` whose
/// first row is all ones (the direct path is not reflected).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix(CMatrix);

impl PhaseMatrix {
    pub fn new(v: CMatrix) -> Result<Self> {
        if v.nrows() == 0 || v.ncols() == 0 {
            return Err(Error::Dimension("phase matrix must be non-empty".into()));
        }
        if let Some(bad) = v.iter().find(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::Parameter(format!(
                "phase matrix entry {bad} violates the unit-modulus constraint"
            )));
        }
        if let Some(n) = (0..v.ncols()).find(|&n| (v[(0, n)] - ONE).norm() > UNIT_MODULUS_TOL) {
            return Err(Error::Parameter(format!(
                "first row of the phase matrix must be 1, column {n} has {}",
                v[(0, n)]
            )));
        }
        Ok(Self(v))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// `L + 1`.
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    /// `N_v`.
    pub fn n_v(&self) -> usize {
        self.0.ncols()
    }

    /// Max deviation of `|V[m,n]|` from one.
    pub fn max_modulus_error(&self) -> f64 {
        self.0
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Received pilots for one channel: `Y = H V + N` and `y = vec(Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y_mat: CMatrix,
    pub y: CVector,
    pub noise_variance: f64,
}

impl Observation {
    pub fn from_matrix(y_mat: CMatrix, noise_variance: f64) -> Self {
        let y = vec_of(&y_mat);
        Self {
            y_mat,
            y,
            noise_variance,
        }
    }
}

fn check_noise_variance(sigma2: f64) -> Result<()> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Parameter(format!(
            "noise variance must be finite and nonnegative, got {sigma2}"
        )));
    }
    Ok(())
}

/// Draw an `rows x cols` CN(0, sigma2) noise matrix.
pub fn noise_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sigma2: f64, rng: &mut R) -> CMatrix {
    // Column-major fill order, fixed for reproducibility.
    let mut n = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            n[(i, j)] = complex_normal(rng, sigma2);
        }
    }
    n
}

/// `Y = H V + N` with i.i.d. CN(0, sigma2) noise. With `sigma2 == 0` the
/// generator is not touched and `Y = H V` exactly.
pub fn observe<R: Rng + ?Sized>(
    h: &CMatrix,
    v: &PhaseMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<Observation> {
    check_noise_variance(sigma2)?;
    let noise = if sigma2 == 0.0 {
        None
    } else {
        Some(noise_matrix(h.nrows(), v.n_v(), sigma2, rng))
    };
    observe_with_noise(h, v.matrix(), noise.as_ref(), sigma2)
}

/// `Y = H V + N` for a caller-provided noise realization (or none).
pub fn observe_with_noise(
    h: &CMatrix,
    v: &CMatrix,
    noise: Option<&CMatrix>,
    sigma2: f64,
) -> Result<Observation> {
    check_noise_variance(sigma2)?;
    dim_check(h.ncols() == v.nrows(), || {
        format!(
            "H has {} columns but V has {} rows",
            h.ncols(),
            v.nrows()
        )
    })?;
    let mut y = h * v;
    if let Some(n) = noise {
        dim_check(n.shape() == y.shape(), || {
            format!("noise shape {:?} != observation shape {:?}", n.shape(), y.shape())
        })?;
        y += n;
    }
    Ok(Observation::from_matrix(y, sigma2))
}

/// `A = V^T ⊗ I_M`, so that `A vec(H) = vec(H V)`.
pub fn build_observation_matrix(v: &CMatrix, m: usize) -> CMatrix {
    kron(&v.transpose(), &CMatrix::identity(m, m))
}

/// `SNR = 1 / sigma^2` on channels normalized to `E|h|^2 = M (L+1)`.
pub fn snr_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Mean of `|H - Ĥ|_F^2 / (M (L+1))` over the batch.
pub fn nmse(truth: &[CMatrix], estimate: &[CMatrix]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Parameter("nmse of an empty batch".into()));
    }
    dim_check(truth.len() == estimate.len(), || {
        format!(
            "batch sizes differ: {} true vs {} estimated",
            truth.len(),
            estimate.len()
        )
    })?;
    let mut total = 0.0;
    for (h, e) in truth.iter().zip(estimate) {
        dim_check(h.shape() == e.shape(), || {
            format!("shape {:?} vs {:?}", h.shape(), e.shape())
        })?;
        total += frobenius_sq(&(h - e)) / h.len() as f64;
    }
    Ok(total / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::rng::rng_from_seed;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0))
    }

    fn random_phases(rows: usize, cols: usize, seed: u64) -> PhaseMatrix {
        let mut rng = rng_from_seed(seed);
        let v = CMatrix::from_fn(rows, cols, |r, _| {
            if r == 0 {
                ONE
            } else {
                let z = complex_normal(&mut rng, 1.0);
                z / z.norm()
            }
        });
        PhaseMatrix::new(v).unwrap()
    }

    #[test]
    fn dims_reject_zero() {
        assert!(SystemDims::new(0, 1, 1).is_err());
        assert!(SystemDims::new(1, 0, 1).is_err());
        assert!(SystemDims::new(1, 1, 0).is_err());
        let d = SystemDims::new(4, 8, 3).unwrap();
        assert_eq!(d.channel_dim(), 36);
        assert_eq!(d.observation_dim(), 12);
    }

    #[test]
    fn composite_with_zero_cascade() {
        let h0 = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-1.0, 0.5)]);
        let h1 = CVector::zeros(3);
        let h2 = random_matrix(2, 3, 1);
        let h = assemble_composite(&h0, &h1, &h2).unwrap();
        assert_eq!(h.column(0), h0.column(0));
        assert!(h.columns(1, 3).iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn composite_scalar_khatri_rao() {
        let h0 = CVector::from_vec(vec![ONE]);
        let h1 = CVector::from_vec(vec![C64::new(0.0, 1.0)]);
        let h2 = CMatrix::from_element(1, 1, C64::new(2.0, 0.0));
        let h = assemble_composite(&h0, &h1, &h2).unwrap();
        assert_eq!(h[(0, 0)], ONE);
        assert_eq!(h[(0, 1)], C64::new(0.0, 2.0));
    }

    #[test]
    fn composite_matches_entrywise_loop() {
        let mut rng = rng_from_seed(11);
        let h0 = CVector::from_fn(2, |_, _| complex_normal(&mut rng, 1.0));
        let h1 = CVector::from_fn(3, |_, _| complex_normal(&mut rng, 1.0));
        let h2 = random_matrix(2, 3, 12);
        let h = assemble_composite(&h0, &h1, &h2).unwrap();
        for m in 0..2 {
            assert_eq!(h[(m, 0)], h0[m]);
            for ell in 0..3 {
                assert_eq!(h[(m, ell + 1)], h1[ell] * h2[(m, ell)]);
            }
        }
    }

    #[test]
    fn composite_dimension_error() {
        let err = assemble_composite(&CVector::zeros(2), &CVector::zeros(3), &CMatrix::zeros(3, 3));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn phase_matrix_validation() {
        let mut v = CMatrix::from_element(3, 2, ONE);
        assert!(PhaseMatrix::new(v.clone()).is_ok());
        v[(1, 1)] = C64::new(0.5, 0.0);
        assert!(PhaseMatrix::new(v.clone()).is_err());
        v[(1, 1)] = ONE;
        v[(0, 1)] = C64::new(0.0, 1.0);
        assert!(PhaseMatrix::new(v).is_err());
    }

    #[test]
    fn noiseless_observation_is_exact_and_rng_free() {
        let h = random_matrix(2, 4, 3);
        let v = random_phases(4, 3, 4);
        let a = observe(&h, &v, 0.0, &mut rng_from_seed(1)).unwrap();
        let b = observe(&h, &v, 0.0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.y_mat, &h * v.matrix());
        assert_eq!(a.y, vec_of(&a.y_mat));
    }

    #[test]
    fn identity_phases_return_channel() {
        // V = I is not a valid phase book, but the raw observation path accepts any V.
        let h = random_matrix(3, 3, 5);
        let obs = observe_with_noise(&h, &CMatrix::identity(3, 3), None, 0.0).unwrap();
        assert_eq!(obs.y_mat, h);
    }

    #[test]
    fn negative_noise_variance_rejected() {
        let h = random_matrix(1, 2, 6);
        let v = random_phases(2, 2, 7);
        assert!(matches!(
            observe(&h, &v, -1.0, &mut rng_from_seed(0)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn noisy_observation_matches_vectorized_model() {
        let h = random_matrix(2, 3, 8);
        let v = random_phases(3, 2, 9);
        let sigma2 = 0.3;
        let obs = observe(&h, &v, sigma2, &mut rng_from_seed(10)).unwrap();
        let noise = noise_matrix(2, 2, sigma2, &mut rng_from_seed(10));
        let a = build_observation_matrix(v.matrix(), 2);
        let expect = &a * vec_of(&h) + vec_of(&noise);
        assert!(max_abs_diff(obs.y.as_slice(), expect.as_slice()) < 1e-12);
    }

    #[test]
    fn observation_matrix_special_cases() {
        let eye = CMatrix::identity(3, 3);
        assert_eq!(build_observation_matrix(&eye, 2), CMatrix::identity(6, 6));
        let v = random_phases(3, 2, 13);
        assert_eq!(build_observation_matrix(v.matrix(), 1), v.matrix().transpose());
    }

    #[test]
    fn observation_matrix_vec_identity() {
        let v = random_phases(2, 2, 14);
        let a = build_observation_matrix(v.matrix(), 2);
        for s in 0..10 {
            let h = random_matrix(2, 2, 100 + s);
            let lhs = &a * vec_of(&h);
            let rhs = vec_of(&(&h * v.matrix()));
            assert!(max_abs_diff(lhs.as_slice(), rhs.as_slice()) < 1e-12);
        }
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_noise_variance(0.0), 1.0);
        assert!((snr_to_noise_variance(40.0) - 1e-4).abs() < 1e-18);
        assert!((snr_to_noise_variance(-10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_cases() {
        let h = random_matrix(2, 3, 15);
        assert_eq!(nmse(std::slice::from_ref(&h), std::slice::from_ref(&h)).unwrap(), 0.0);
        let one = CMatrix::from_row_slice(1, 2, &[ONE, C64::new(0.0, 0.0)]);
        let zero = CMatrix::zeros(1, 2);
        assert_eq!(nmse(&[one], &[zero]).unwrap(), 0.5);
        assert!(matches!(nmse(&[], &[]), Err(Error::Parameter(_))));
    }
}
