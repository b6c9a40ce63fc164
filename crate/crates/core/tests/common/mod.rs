//! Reference implementations used as test oracles. They are written from the
//! definitions with plain loops and dense solves, independent of the library's
//! fast paths.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use risphase::linalg::{complex_normal, CMatrix, CVector};
use risphase::learn::PhaseCnnModel;

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
}

/// `vec` by explicit column-major indexing.
pub fn vec_naive(m: &CMatrix) -> CVector {
    let (r, c) = m.shape();
    CVector::from_fn(r * c, |k, _| m[(k % r, k / r)])
}

/// `(Vᵀ ⊗ I_M)` entry by entry: row `i + M n`, column `i' + M j` holds
/// `V[j, n]` when `i == i'`.
pub fn observation_matrix_naive(v: &CMatrix, m: usize) -> CMatrix {
    let (rows, n_v) = v.shape();
    CMatrix::from_fn(m * n_v, m * rows, |r, c| {
        let (i, n) = (r % m, r / m);
        let (i2, j) = (c % m, c / m);
        if i == i2 {
            v[(j, n)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Full `(L+1)`-point DFT column `c` (1-based): `exp(j 2π m (c-1) / (L+1))`.
pub fn dft_column(size: usize, c: usize) -> CVector {
    CVector::from_fn(size, |m, _| C64::from_polar(1.0, 2.0 * PI * (m * (c - 1)) as f64 / size as f64))
}

/// LMMSE `μ + C Aᴴ (A C Aᴴ + σ² I)⁻¹ (y − A μ)` via an explicit `A`.
pub fn lmmse_naive(y: &CVector, v: &CMatrix, m: usize, sigma2: f64, mean: &CVector, cov: &CMatrix) -> CVector {
    let a = observation_matrix_naive(v, m);
    let s = &a * cov * a.adjoint() + CMatrix::identity(a.nrows(), a.nrows()) * C64::new(sigma2, 0.0);
    let gain = cov * a.adjoint() * s.try_inverse().expect("invertible observation covariance");
    mean + gain * (y - &a * mean)
}

/// Minimum-norm least squares `vec(Y V⁺)` with the SVD pseudo-inverse.
pub fn ls_naive(y: &CVector, v: &CMatrix, m: usize) -> CVector {
    let a = observation_matrix_naive(v, m);
    let pinv = a.pseudo_inverse(1e-12).expect("SVD converges");
    pinv * y
}

/// Per-sample best DFT column pair by brute force over every ordered
/// `c1 < c2`, scoring `‖h − ĥ_LS‖²` with the given noise realizations.
pub fn brute_force_best_pairs(channels: &[CMatrix], noise: &[CMatrix]) -> Vec<Vec<usize>> {
    let (m, size) = channels[0].shape();
    channels
        .iter()
        .zip(noise)
        .map(|(h, n)| {
            let mut best = (f64::INFINITY, vec![]);
            for c1 in 1..=size {
                for c2 in c1 + 1..=size {
                    let mut v = CMatrix::zeros(size, 2);
                    v.set_column(0, &dft_column(size, c1));
                    v.set_column(1, &dft_column(size, c2));
                    let y = vec_naive(&(h * &v + n));
                    let est = ls_naive(&y, &v, m);
                    let err = (vec_naive(h) - est).norm_squared();
                    if err < best.0 {
                        best = (err, vec![c1, c2]);
                    }
                }
            }
            best.1
        })
        .collect()
}

/// `E[h | y]` for a scalar complex `h ~ Σ w_k CN(μ_k, c_k)` observed as
/// `y = h + n`, `n ~ CN(0, σ²)`, by trapezoid quadrature over the complex plane.
pub fn scalar_cme_quadrature(y: C64, weights: &[f64], means: &[C64], vars: &[f64], sigma2: f64, half_width: f64, steps: usize) -> C64 {
    let cn = |x: C64, mu: C64, var: f64| (-(x - mu).norm_sqr() / var).exp() / (PI * var);
    let h = 2.0 * half_width / steps as f64;
    let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let x = C64::new(-half_width + i as f64 * h, -half_width + j as f64 * h);
            let edge = |k: usize| if k == 0 || k == steps { 0.5 } else { 1.0 };
            let prior: f64 = weights.iter().zip(means).zip(vars).map(|((w, mu), v)| w * cn(x, *mu, *v)).sum();
            let p = edge(i) * edge(j) * prior * cn(y, x, sigma2);
            num += x * p;
            den += p;
        }
    }
    num / den
}

/// Largest relative deviation between the analytic gradient and central
/// differences of the batch loss, over the angles and every CNN parameter.
pub fn worst_gradient_error(model: &PhaseCnnModel, hs: &[CMatrix], ns: &[CMatrix], step: f64) -> f64 {
    let loss = |m: &PhaseCnnModel| m.clone().loss_and_gradients(hs, ns, false).unwrap().0;
    let (_, grads) = model.clone().loss_and_gradients(hs, ns, false).unwrap();
    let rel = |analytic: f64, fd: f64| (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
    let mut worst: f64 = 0.0;

    for i in 0..model.phase.phi.len() {
        let shifted = |delta: f64| {
            let mut c = model.clone();
            c.phase.phi.as_mut_slice()[i] += delta;
            loss(&c)
        };
        let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
        worst = worst.max(rel(grads.phi.as_slice()[i], fd));
    }

    let tensors: Vec<Vec<f64>> = grads.cnn.tensors().iter().map(|t| t.to_vec()).collect();
    for (t, g) in tensors.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut c = model.clone();
                let mut k = 0;
                c.cnn.visit_params_mut(|p| {
                    if k == t {
                        p[i] += delta;
                    }
                    k += 1;
                });
                loss(&c)
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            worst = worst.max(rel(analytic, fd));
        }
    }
    worst
}

/// Real angles as a column-major matrix, for building phase layers directly.
pub fn angles<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 * PI)
}
