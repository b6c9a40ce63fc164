//! Dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Column-major vectorization.
pub fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Real and imaginary parts as separate real matrices.
pub fn split_parts(m: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

fn join_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMatrix {
    re.zip_map(im, C64::new)
}

/// `A B` through four real GEMMs, which run much faster than the generic
/// complex product for large operands.
pub fn complex_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ai) = split_parts(a);
    let (br, bi) = split_parts(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join_parts(&re, &im)
}

/// Gram matrix `X X^H` through real GEMMs.
pub fn gram(x: &CMatrix) -> CMatrix {
    let (xr, xi) = split_parts(x);
    let re = &xr * xr.transpose() + &xi * xi.transpose();
    let im = &xi * xr.transpose() - &xr * xi.transpose();
    join_parts(&re, &im)
}

/// Draw from CN(0, variance): real and imaginary parts each carry half the power.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Moore-Penrose pseudoinverse via SVD with cutoff `max(rows, cols) * eps * sigma_max`.
/// Returns the pseudoinverse and the numerical rank.
pub fn pinv(m: &CMatrix) -> Result<(CMatrix, usize)> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((CMatrix::zeros(cols, rows), 0));
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let p = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::Numerical(format!("pseudoinverse failed: {e}")))?;
    Ok((p, rank))
}

/// Cholesky factor `C = L L^H` of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct HermitianFactor {
    lower: CMatrix,
    log_det: f64,
}

impl HermitianFactor {
    /// Factor `c` after symmetrizing it to `(c + c^H) / 2`. Returns `None`
    /// unless every pivot is positive and finite.
    pub fn new(c: &CMatrix) -> Option<Self> {
        let n = c.nrows();
        if n != c.ncols() {
            return None;
        }
        let mut lower = CMatrix::zeros(n, n);
        let mut log_det = 0.0;
        for j in 0..n {
            let mut d = c[(j, j)].re;
            for k in 0..j {
                d -= lower[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            lower[(j, j)] = C64::new(djj, 0.0);
            log_det += 2.0 * djj.ln();
            for i in j + 1..n {
                let mut s = (c[(i, j)] + c[(j, i)].conj()) * 0.5;
                for k in 0..j {
                    s -= lower[(i, k)] * lower[(j, k)].conj();
                }
                lower[(i, j)] = s / djj;
            }
        }
        Some(Self { lower, log_det })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> &CMatrix {
        &self.lower
    }

    /// `r^H C^{-1} r`, computed as `|L^{-1} r|^2`. `scratch` is overwritten.
    pub fn quad_form(&self, r: &[C64], scratch: &mut Vec<C64>) -> f64 {
        let n = self.dim();
        scratch.clear();
        scratch.extend_from_slice(r);
        let l = self.lower.as_slice();
        let mut acc = 0.0;
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            let zj = scratch[j] / col[j];
            acc += zj.norm_sqr();
            for i in j + 1..n {
                scratch[i] -= col[i] * zj;
            }
        }
        acc
    }

    /// Solve `C X = B`.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("factor has a nonzero diagonal");
        self.lower
            .ad_solve_lower_triangular(&y)
            .expect("factor has a nonzero diagonal")
    }

    /// `L^{-1}`, the whitening transform: `r^H C^{-1} r = |L^{-1} r|^2`.
    pub fn whitener(&self) -> CMatrix {
        let n = self.dim();
        self.lower
            .solve_lower_triangular(&CMatrix::identity(n, n))
            .expect("factor has a nonzero diagonal")
    }

    /// `tr(C^{-1}) = |L^{-1}|_F^2`.
    pub fn trace_inverse(&self) -> f64 {
        frobenius_sq(&self.whitener())
    }
}

/// Hermitian part of a matrix, `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Real-symmetric eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_gemm_products_match_generic() {
        let mut rng = crate::rng::rng_from_seed(3);
        let a = CMatrix::from_fn(5, 7, |_, _| complex_normal(&mut rng, 1.0));
        let b = CMatrix::from_fn(7, 4, |_, _| complex_normal(&mut rng, 1.0));
        assert!(max_abs_diff(complex_mul(&a, &b).as_slice(), (&a * &b).as_slice()) < 1e-12);
        assert!(max_abs_diff(gram(&a).as_slice(), (&a * a.adjoint()).as_slice()) < 1e-12);
    }
    use crate::rng::rng_from_seed;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, 1.0))
    }

    #[test]
    fn kron_matches_block_definition() {
        let a = random_matrix(2, 3, 1);
        let b = random_matrix(3, 2, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..3 {
                    for q in 0..2 {
                        let expect = a[(i, j)] * b[(p, q)];
                        assert!((k[(i * 3 + p, j * 2 + q)] - expect).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn pinv_of_tall_full_rank_is_left_inverse() {
        let a = random_matrix(5, 3, 3);
        let (p, rank) = pinv(&a).unwrap();
        assert_eq!(rank, 3);
        let eye = &p * &a;
        assert!(max_abs_diff(eye.as_slice(), CMatrix::identity(3, 3).as_slice()) < 1e-12);
    }

    #[test]
    fn pinv_reports_rank_deficiency() {
        let col = random_matrix(4, 1, 4);
        let a = CMatrix::from_fn(4, 3, |i, _| col[i]);
        let (_, rank) = pinv(&a).unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn factor_quad_form_and_logdet() {
        let b = random_matrix(4, 4, 5);
        let c = &b * b.adjoint() + CMatrix::identity(4, 4);
        let f = HermitianFactor::new(&c).unwrap();
        let r = random_matrix(4, 1, 6);
        let direct = (r.adjoint() * c.clone().try_inverse().unwrap() * &r)[(0, 0)].re;
        let mut scratch = Vec::new();
        assert!((f.quad_form(r.as_slice(), &mut scratch) - direct).abs() < 1e-10 * direct);
        let det: f64 = hermitian_eigenvalues(&c).iter().map(|x| x.ln()).sum();
        assert!((f.log_det() - det).abs() < 1e-10);
        let tr: f64 = hermitian_eigenvalues(&c).iter().map(|x| 1.0 / x).sum();
        assert!((f.trace_inverse() - tr).abs() < 1e-10);
    }

    #[test]
    fn factor_rejects_indefinite() {
        let mut c = CMatrix::identity(3, 3);
        c[(1, 1)] = C64::new(-1.0, 0.0);
        assert!(HermitianFactor::new(&c).is_none());
    }
}
