//! Complex Gaussian mixture models and the GMM-based conditional mean estimator
//!
//! ```text
//! ĥ = Σ_k p(k|y) (μ_k + C_k A^H C_{y,k}^{-1} (y - A μ_k)),   C_{y,k} = A C_k A^H + σ² I
//! ```
//!
//! Fitting is EM with a covariance floor. The floor enters as the conjugate
//! penalty `-ε N Σ_k tr(C_k^{-1})`, whose exact M-step is
//! `C_k = (S_k + ε N I) / N_k`; the penalized log-likelihood is therefore
//! nondecreasing across iterations and every covariance has eigenvalues
//! of at least `ε`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::read_complex;
use crate::error::{Error, FormatError, Result};
use crate::linalg::{complex_mul, frobenius_sq, gram, hermitian_part, CMatrix, CVector, HermitianFactor, C64};
use crate::model::{build_observation_matrix, PhaseMatrix};

use super::lmmse::lmmse_gain;
use super::{antennas_from_channel, check_len, check_noise, ChannelEstimator, PreparedEstimator};

const HERMITIAN_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Components with less responsibility mass than this fraction of the data are frozen.
const MIN_RELATIVE_MASS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<CVector>,
    covariances: Vec<CMatrix>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<CVector>, covariances: Vec<CMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Parameter("a mixture needs at least one component".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::Dimension(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Parameter(format!("mixture weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        for (i, (mu, c)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != d || c.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "component {i}: mean length {} and covariance {:?} do not match d = {d}",
                    mu.len(),
                    c.shape()
                )));
            }
            let asym = c
                .iter()
                .zip(c.adjoint().iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if asym > HERMITIAN_TOL {
                return Err(Error::Parameter(format!(
                    "component {i} covariance is not Hermitian (deviation {asym:e})"
                )));
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[CVector] {
        &self.means
    }

    pub fn covariances(&self) -> &[CMatrix] {
        &self.covariances
    }

    pub fn prepare(&self, v: &PhaseMatrix, sigma2: f64) -> Result<PreparedGmm> {
        PreparedGmm::new(self, v, sigma2)
    }

    /// Mixture log-density `ln Σ_k p(k) N_C(h; μ_k, C_k)`.
    pub fn log_density(&self, h: &CVector) -> Result<f64> {
        check_len(h, self.dim())?;
        let factors = factor_all(&self.covariances, None)?;
        Ok(log_densities(h, &self.weights, &self.means, &factors, &mut Vec::new()).1)
    }
}

fn factor_all(covs: &[CMatrix], iteration: Option<usize>) -> Result<Vec<HermitianFactor>> {
    covs.iter()
        .enumerate()
        .map(|(k, c)| {
            HermitianFactor::new(c).ok_or_else(|| {
                let at = iteration.map(|i| format!(" at EM iteration {i}")).unwrap_or_default();
                Error::Numerical(format!("covariance of component {k} is not positive definite{at}"))
            })
        })
        .collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-component joint log-densities `ln p(k) + ln N_C(x; μ_k, C_k)` and their log-sum.
fn log_densities(
    x: &CVector,
    weights: &[f64],
    means: &[CVector],
    factors: &[HermitianFactor],
    scratch: &mut Vec<C64>,
) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mut residual = vec![C64::new(0.0, 0.0); x.len()];
    let lp: Vec<f64> = weights
        .iter()
        .zip(means)
        .zip(factors)
        .map(|((w, mu), f)| {
            for (r, (a, b)) in residual.iter_mut().zip(x.iter().zip(mu.iter())) {
                *r = a - b;
            }
            w.ln() - d * PI.ln() - f.log_det() - f.quad_form(&residual, scratch)
        })
        .collect();
    let lse = log_sum_exp(&lp);
    (lp, lse)
}

/// Softmax of log-scores, stable under adding a common constant.
pub(crate) fn normalize_log_weights(lp: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(lp);
    lp.iter().map(|v| (v - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFitOptions {
    pub components: usize,
    pub max_iter: usize,
    /// Stop when the relative objective improvement falls below this.
    pub tol: f64,
    /// Absolute covariance floor `ε`.
    pub reg_floor: f64,
}

impl GmmFitOptions {
    pub fn new(components: usize) -> Self {
        Self {
            components,
            max_iter: 100,
            tol: 1e-6,
            reg_floor: 1e-6,
        }
    }

    /// Floor expressed relative to the mean eigenvalue `tr(E[h h^H]) / d` of the data.
    pub fn with_relative_floor(mut self, data: &[CVector], relative: f64) -> Self {
        let d = data.first().map_or(1, |h| h.len()) as f64;
        let power: f64 = data.iter().map(|h| h.norm_squared()).sum::<f64>() / data.len().max(1) as f64;
        self.reg_floor = relative * power / d;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GmmFitReport {
    /// Penalized log-likelihood after initialization and after each M-step.
    pub objective: Vec<f64>,
    /// Plain training log-likelihood at the same points.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct EStep {
    resp: Vec<f64>,
    log_likelihood: f64,
    objective: f64,
}

fn e_step(
    x: &CMatrix,
    model: &GmmModel,
    reg_floor: f64,
    iteration: usize,
) -> Result<EStep> {
    const BLOCK: usize = 2048;
    let (d, n) = x.shape();
    let k = model.components();
    let factors = factor_all(&model.covariances, Some(iteration))?;
    let whiteners: Vec<CMatrix> = factors.iter().map(|f| f.whitener()).collect();
    let offsets: Vec<f64> = model
        .weights
        .iter()
        .zip(&factors)
        .map(|(w, f)| w.ln() - d as f64 * PI.ln() - f.log_det())
        .collect();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    // Quadratic forms for a block of samples come from one whitening GEMM per component.
    let blocks: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|&start| {
            let width = BLOCK.min(n - start);
            let cols = x.columns(start, width);
            let mut lp = vec![0.0; k * width];
            for j in 0..k {
                let mu = &model.means[j];
                let centred = CMatrix::from_fn(d, width, |r, c| cols[(r, c)] - mu[r]);
                let z = complex_mul(&whiteners[j], &centred);
                for c in 0..width {
                    lp[c * k + j] = offsets[j] - z.column(c).norm_squared();
                }
            }
            let mut ll = 0.0;
            for row in lp.chunks_exact_mut(k) {
                let lse = log_sum_exp(row);
                ll += lse;
                for v in row.iter_mut() {
                    *v = (*v - lse).exp();
                }
            }
            (lp, ll)
        })
        .collect();
    let mut resp = Vec::with_capacity(n * k);
    let mut log_likelihood = 0.0;
    for (r, ll) in blocks {
        resp.extend(r);
        log_likelihood += ll;
    }
    let penalty: f64 = whiteners.iter().map(frobenius_sq).sum::<f64>() * reg_floor * n as f64;
    let objective = log_likelihood - penalty;
    if !objective.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite log-likelihood at EM iteration {iteration}"
        )));
    }
    Ok(EStep {
        resp,
        log_likelihood,
        objective,
    })
}

fn m_step(data: &[CVector], resp: &[f64], previous: &GmmModel, reg_floor: f64) -> GmmModel {
    let n = data.len();
    let k = previous.components();
    let d = previous.dim();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        let r: Vec<f64> = (0..n).map(|i| resp[i * k + j]).collect();
        let nk: f64 = r.iter().sum();
        weights.push(nk / n as f64);
        // A starved component keeps its parameters (a generalized EM step,
        // still monotone); its exact update would divide by ~0.
        if nk <= MIN_RELATIVE_MASS * n as f64 {
            means.push(previous.means[j].clone());
            covariances.push(previous.covariances[j].clone());
            continue;
        }
        let mut mu = CVector::zeros(d);
        for (x, &w) in data.iter().zip(&r) {
            if w > 0.0 {
                mu.axpy(C64::new(w, 0.0), x, C64::new(1.0, 0.0));
            }
        }
        mu /= C64::new(nk, 0.0);
        let active: Vec<usize> = (0..n).filter(|&i| r[i] > 0.0).collect();
        let centred = CMatrix::from_fn(d, active.len(), |row, col| {
            let i = active[col];
            (data[i][row] - mu[row]) * r[i].sqrt()
        });
        let mut c = gram(&centred);
        for i in 0..d {
            c[(i, i)] += reg_floor * n as f64;
        }
        c /= C64::new(nk, 0.0);
        covariances.push(hermitian_part(&c));
        means.push(mu);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmModel {
        weights,
        means,
        covariances,
    }
}

/// k-means++ seeding of `k` centres.
fn seed_means<R: Rng + ?Sized>(data: &[CVector], k: usize, rng: &mut R) -> Vec<CVector> {
    let n = data.len();
    let mut centres = vec![data[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = data.iter().map(|x| (x - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data[idx].clone();
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min((x - &c).norm_squared());
        }
        centres.push(c);
    }
    centres
}

fn initial_model<R: Rng + ?Sized>(data: &[CVector], opts: &GmmFitOptions, rng: &mut R) -> GmmModel {
    let n = data.len();
    let d = data[0].len();
    let k = opts.components;
    let mut mean = CVector::zeros(d);
    for x in data {
        mean += x;
    }
    mean /= C64::new(n as f64, 0.0);
    let centred = CMatrix::from_fn(d, n, |row, col| data[col][row] - mean[row]);
    let mut cov = gram(&centred) / C64::new(n as f64, 0.0);
    for i in 0..d {
        cov[(i, i)] += opts.reg_floor;
    }
    let cov = hermitian_part(&cov);
    GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(data, k, rng),
        covariances: vec![cov; k],
    }
}

/// Fit a `K`-component complex GMM by EM.
pub fn gmm_fit<R: Rng + ?Sized>(
    data: &[CVector],
    opts: &GmmFitOptions,
    rng: &mut R,
) -> Result<(GmmModel, GmmFitReport)> {
    let k = opts.components;
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::Parameter(format!(
            "K = {k} components need at least {k} samples, got {}",
            data.len()
        )));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension("training vectors must share a positive length".into()));
    }
    if !(opts.reg_floor > 0.0) || !opts.reg_floor.is_finite() {
        return Err(Error::Parameter(format!(
            "covariance floor must be positive, got {}",
            opts.reg_floor
        )));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be nonnegative, got {}", opts.tol)));
    }

    let x = CMatrix::from_fn(d, data.len(), |r, c| data[c][r]);
    let mut model = initial_model(data, opts, rng);
    let mut state = e_step(&x, &model, opts.reg_floor, 0)?;
    let mut report = GmmFitReport {
        objective: vec![state.objective],
        log_likelihood: vec![state.log_likelihood],
        ..Default::default()
    };
    for it in 1..=opts.max_iter {
        let next = m_step(data, &state.resp, &model, opts.reg_floor);
        let next_state = e_step(&x, &next, opts.reg_floor, it)?;
        report.objective.push(next_state.objective);
        report.log_likelihood.push(next_state.log_likelihood);
        report.iterations = it;
        let gain = next_state.objective - state.objective;
        model = next;
        let done = gain <= opts.tol * state.objective.abs();
        state = next_state;
        if done {
            report.converged = true;
            break;
        }
    }
    Ok((model, report))
}

struct PreparedComponent {
    log_weight: f64,
    mean: CVector,
    projected_mean: CVector,
    gain: CMatrix,
    factor: HermitianFactor,
}

/// GMM estimator specialised to one `(V, σ²)`.
pub struct PreparedGmm {
    components: Vec<PreparedComponent>,
    obs_dim: usize,
    cols: usize,
}

impl PreparedGmm {
    pub fn new(model: &GmmModel, v: &PhaseMatrix, sigma2: f64) -> Result<Self> {
        check_noise(sigma2)?;
        let cols = v.rows();
        let m = antennas_from_channel(model.dim(), cols)?;
        let a = build_observation_matrix(v.matrix(), m);
        let components = (0..model.components())
            .map(|k| {
                let (gain, factor) = lmmse_gain(&model.covariances[k], &a, sigma2).ok_or_else(|| {
                    Error::Numerical(format!(
                        "observation covariance of component {k} is not positive definite"
                    ))
                })?;
                Ok(PreparedComponent {
                    log_weight: model.weights[k].ln(),
                    mean: model.means[k].clone(),
                    projected_mean: &a * &model.means[k],
                    gain,
                    factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            obs_dim: a.nrows(),
            cols,
        })
    }

    fn scores(&self, y: &CVector) -> Result<(Vec<f64>, Vec<CVector>)> {
        check_len(y, self.obs_dim)?;
        let mut scratch = Vec::with_capacity(self.obs_dim);
        let mut residuals = Vec::with_capacity(self.components.len());
        let lp = self
            .components
            .iter()
            .map(|c| {
                let r = y - &c.projected_mean;
                let q = c.factor.quad_form(r.as_slice(), &mut scratch);
                residuals.push(r);
                c.log_weight - c.factor.log_det() - q
            })
            .collect::<Vec<_>>();
        if lp.iter().all(|v| !v.is_finite()) {
            return Err(Error::Numerical("all component likelihoods are non-finite".into()));
        }
        Ok((lp, residuals))
    }

    /// Posterior component probabilities `p(k | y)`.
    pub fn responsibilities(&self, y: &CVector) -> Result<Vec<f64>> {
        Ok(normalize_log_weights(&self.scores(y)?.0))
    }
}

impl PreparedEstimator for PreparedGmm {
    fn estimate(&self, y: &CVector) -> Result<CVector> {
        let (lp, residuals) = self.scores(y)?;
        let resp = normalize_log_weights(&lp);
        let mut h = CVector::zeros(self.components[0].mean.len());
        for ((c, r), p) in self.components.iter().zip(&residuals).zip(resp) {
            if p == 0.0 {
                continue;
            }
            let term = &c.mean + &c.gain * r;
            h.axpy(C64::new(p, 0.0), &term, C64::new(1.0, 0.0));
        }
        Ok(h)
    }

    fn channel_cols(&self) -> usize {
        self.cols
    }
}

impl ChannelEstimator for GmmModel {
    fn name(&self) -> &'static str {
        "gmm"
    }

    fn prepare(&self, v: &PhaseMatrix, sigma2: f64) -> Result<Box<dyn PreparedEstimator>> {
        Ok(Box::new(PreparedGmm::new(self, v, sigma2)?))
    }
}

/// `p(k | y)` for observation `y` taken with phases `V` at noise variance `σ²`.
pub fn gmm_responsibilities(
    y: &CVector,
    v: &PhaseMatrix,
    sigma2: f64,
    model: &GmmModel,
) -> Result<Vec<f64>> {
    PreparedGmm::new(model, v, sigma2)?.responsibilities(y)
}

/// GMM conditional mean estimate of `vec(H)`.
pub fn gmm_estimate(y: &CVector, v: &PhaseMatrix, sigma2: f64, model: &GmmModel) -> Result<CVector> {
    PreparedGmm::new(model, v, sigma2)?.estimate(y)
}

pub const GMM_MAGIC: [u8; 4] = *b"RGMM";
const GMM_VERSION: u16 = 1;
const GMM_HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// `"RGMM" | version u16 | K u32 | d u32 | weights (K f64) | means (K·d complex)
/// | covariances (K·d·d complex, column-major)`, little-endian, complex as (re, im).
pub fn save_gmm(model: &GmmModel, path: &Path) -> Result<()> {
    let bytes = encode_gmm(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_gmm(model: &GmmModel) -> Vec<u8> {
    let (k, d) = (model.components(), model.dim());
    let mut out = Vec::with_capacity(GMM_HEADER_LEN + 8 * k + 16 * k * d * (d + 1));
    out.extend_from_slice(&GMM_MAGIC);
    out.extend_from_slice(&GMM_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for w in &model.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for z in model.means.iter().flat_map(|m| m.iter()).chain(model.covariances.iter().flat_map(|c| c.iter())) {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gmm(&bytes)
}

pub fn decode_gmm(bytes: &[u8]) -> Result<GmmModel> {
    if bytes.len() < GMM_HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: GMM_HEADER_LEN as u64,
            found: bytes.len() as u64,
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != GMM_MAGIC {
        return Err(FormatError::BadMagic {
            expected: GMM_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != GMM_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let k = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as u64;
    if k == 0 || d == 0 {
        return Err(FormatError::Inconsistent(format!("K={k} and d={d} must be positive")).into());
    }
    let expected = 8 * k + 16 * k * d * (d + 1);
    let found = (bytes.len() - GMM_HEADER_LEN) as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(FormatError::TrailingBytes(found - expected).into());
    }
    let (k, d) = (k as usize, d as usize);
    let body = &bytes[GMM_HEADER_LEN..];
    let weights: Vec<f64> = body[..8 * k]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut values = body[8 * k..].chunks_exact(16).map(read_complex);
    let means = (0..k)
        .map(|_| CVector::from_iterator(d, values.by_ref().take(d)))
        .collect();
    let covariances = (0..k)
        .map(|_| CMatrix::from_iterator(d, d, values.by_ref().take(d * d)))
        .collect();
    GmmModel::new(weights, means, covariances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_normal, hermitian_eigenvalues, max_abs_diff};
    use crate::rng::rng_from_seed;

    fn blobs(n: usize, seed: u64) -> Vec<CVector> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 10.0 } else { -10.0 };
                let mut x = CVector::from_fn(2, |_, _| complex_normal(&mut rng, 0.01));
                x[0] += C64::new(sign, 0.0);
                x
            })
            .collect()
    }

    #[test]
    fn starved_component_keeps_its_parameters() {
        let data = blobs(40, 21);
        let x = CMatrix::from_fn(2, data.len(), |r, c| data[c][r]);
        let prev = GmmModel::new(
            vec![0.5, 0.5],
            vec![CVector::zeros(2), CVector::zeros(2)],
            vec![CMatrix::identity(2, 2), CMatrix::identity(2, 2) * C64::new(3.0, 0.0)],
        )
        .unwrap();
        let resp: Vec<f64> = (0..data.len()).flat_map(|_| [1.0, 1e-300]).collect();
        let next = m_step(&data, &resp, &prev, 1e-3);
        assert_eq!(next.covariances[1], prev.covariances[1]);
        assert!(e_step(&x, &next, 1e-3, 1).is_ok());
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = rng_from_seed(1);
        let data: Vec<CVector> = (0..40)
            .map(|_| CVector::from_fn(3, |_, _| complex_normal(&mut rng, 1.0) + C64::new(0.5, 0.0)))
            .collect();
        let opts = GmmFitOptions {
            max_iter: 1,
            ..GmmFitOptions::new(1)
        };
        let (a, _) = gmm_fit(&data, &opts, &mut rng_from_seed(2)).unwrap();
        let (b, _) = gmm_fit(&data, &opts, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        let n = data.len() as f64;
        let mean = data.iter().fold(CVector::zeros(3), |acc, x| acc + x) / C64::new(n, 0.0);
        assert!(max_abs_diff(a.means()[0].as_slice(), mean.as_slice()) < 1e-12);
        let mut cov = CMatrix::zeros(3, 3);
        for x in &data {
            let c = x - &mean;
            cov += &c * c.adjoint();
        }
        cov /= C64::new(n, 0.0);
        for i in 0..3 {
            cov[(i, i)] += opts.reg_floor;
        }
        assert!(max_abs_diff(a.covariances()[0].as_slice(), cov.as_slice()) < 1e-12);
        assert_eq!(a.weights(), &[1.0]);
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let data = blobs(400, 4);
        let (model, report) = gmm_fit(&data, &GmmFitOptions::new(2), &mut rng_from_seed(5)).unwrap();
        assert!(report.converged);
        let mut found = [false, false];
        for (mu, w) in model.means().iter().zip(model.weights()) {
            assert!((w - 0.5).abs() < 0.05);
            for (j, s) in [10.0, -10.0].iter().enumerate() {
                let mut truth = CVector::zeros(2);
                truth[0] = C64::new(*s, 0.0);
                if (mu - truth).norm() < 0.1 {
                    found[j] = true;
                }
            }
        }
        assert_eq!(found, [true, true]);
    }

    #[test]
    fn objective_never_decreases_and_floor_holds() {
        let mut rng = rng_from_seed(6);
        let data: Vec<CVector> = (0..300)
            .map(|i| {
                let scale = if i % 3 == 0 { 3.0 } else { 0.3 };
                CVector::from_fn(4, |_, _| complex_normal(&mut rng, scale))
            })
            .collect();
        let opts = GmmFitOptions {
            tol: 0.0,
            max_iter: 40,
            reg_floor: 1e-3,
            ..GmmFitOptions::new(3)
        };
        let (model, report) = gmm_fit(&data, &opts, &mut rng_from_seed(7)).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] - w[0] >= -1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        for c in model.covariances() {
            assert!(hermitian_eigenvalues(c)[0] >= opts.reg_floor * (1.0 - 1e-9));
        }
        assert!((model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_arguments() {
        let data = blobs(3, 8);
        assert!(matches!(
            gmm_fit(&data, &GmmFitOptions::new(4), &mut rng_from_seed(0)),
            Err(Error::Parameter(_))
        ));
        assert!(gmm_fit(&data, &GmmFitOptions::new(0), &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn model_validation() {
        let mu = vec![CVector::zeros(2)];
        let c = vec![CMatrix::identity(2, 2)];
        assert!(GmmModel::new(vec![0.9], mu.clone(), c.clone()).is_err());
        let mut bad = CMatrix::identity(2, 2);
        bad[(0, 1)] = C64::new(0.0, 1.0);
        assert!(GmmModel::new(vec![1.0], mu.clone(), vec![bad]).is_err());
        assert!(GmmModel::new(vec![1.0], mu, c).is_ok());
    }

    #[test]
    fn codec_round_trip_and_errors() {
        let data = blobs(50, 9);
        let (model, _) = gmm_fit(&data, &GmmFitOptions::new(2), &mut rng_from_seed(10)).unwrap();
        let bytes = encode_gmm(&model);
        assert_eq!(decode_gmm(&bytes).unwrap(), model);
        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"RISD");
        assert!(matches!(decode_gmm(&wrong), Err(Error::Format(FormatError::BadMagic { .. }))));
        assert!(matches!(
            decode_gmm(&bytes[..bytes.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }
}
