//! Phase allocation books: DFT submatrices, subsets of the full DFT matrix,
//! random unit-modulus phases, and the exhaustive search over DFT column sets.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::ChannelEstimator;
use crate::linalg::{complex_normal, frobenius_sq, unvec, vec_of, CMatrix, C64, ONE};
use crate::model::{noise_matrix, PhaseMatrix};
use crate::rng::{item_rng, label};

/// `V[m, n] = exp(j 2π m n / N_v)` for `m = 0..=L`, `n = 0..N_v`.
pub fn dft_submatrix(l: usize, n_v: usize) -> Result<PhaseMatrix> {
    if n_v == 0 {
        return Err(Error::Parameter("N_v must be at least 1".into()));
    }
    let v = CMatrix::from_fn(l + 1, n_v, |m, n| {
        C64::from_polar(1.0, 2.0 * PI * ((m * n) % n_v) as f64 / n_v as f64)
    });
    PhaseMatrix::new(v)
}

/// Columns of the full `(L+1)`-point DFT matrix, selected by 1-based index.
pub fn dft_column_subset(l: usize, columns: &[usize]) -> Result<PhaseMatrix> {
    let size = l + 1;
    if columns.is_empty() {
        return Err(Error::Parameter("at least one DFT column is required".into()));
    }
    let mut seen = vec![false; size];
    for &c in columns {
        if c == 0 || c > size {
            return Err(Error::Parameter(format!("DFT column {c} outside 1..={size}")));
        }
        if std::mem::replace(&mut seen[c - 1], true) {
            return Err(Error::Parameter(format!("DFT column {c} listed twice")));
        }
    }
    let v = CMatrix::from_fn(size, columns.len(), |m, n| {
        let c = columns[n] - 1;
        C64::from_polar(1.0, 2.0 * PI * ((m * c) % size) as f64 / size as f64)
    });
    PhaseMatrix::new(v)
}

/// Rows `1..=L` are `z / |z|` with `z ~ CN(0, 1)` drawn column by column; row 0 is 1.
pub fn random_phases<R: Rng + ?Sized>(l: usize, n_v: usize, rng: &mut R) -> Result<PhaseMatrix> {
    if n_v == 0 {
        return Err(Error::Parameter("N_v must be at least 1".into()));
    }
    let mut v = CMatrix::from_element(l + 1, n_v, ONE);
    for n in 0..n_v {
        for m in 1..=l {
            let z = loop {
                let z = complex_normal(rng, 1.0);
                if z.norm() > 0.0 {
                    break z;
                }
            };
            v[(m, n)] = z / z.norm();
        }
    }
    PhaseMatrix::new(v)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic k-subsets of `1..=n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = (k >= 1 && k <= n).then(|| (1..=k).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - (k - 1 - i) {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DftSearchResult {
    pub n_v: usize,
    /// Best column set (1-based, ascending) for every sample.
    pub per_sample_best: Vec<Vec<usize>>,
    /// Relative frequency of each column among all per-sample best sets; sums to 1.
    pub histogram: Vec<f64>,
    /// Column set with the lowest mean NMSE over all samples.
    pub best_average_set: Vec<usize>,
    pub best_average_nmse: f64,
    pub combinations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Refuse searches with more column combinations than this.
    pub max_combinations: u128,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_combinations: 50_000,
        }
    }
}

/// For every channel and every `N_v`-subset of the `L+1` DFT columns, estimate
/// the channel from one noisy observation and keep the subset with the
/// smallest squared error. Each sample draws one noise matrix that is shared by
/// all subsets. Ties go to the lexicographically smallest subset.
pub fn exhaustive_dft_search<R: Rng + ?Sized>(
    channels: &[CMatrix],
    estimator: &dyn ChannelEstimator,
    n_v: usize,
    sigma2: f64,
    rng: &mut R,
    options: SearchOptions,
) -> Result<DftSearchResult> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Parameter("exhaustive search over an empty dataset".into()))?;
    let (m, cols) = first.shape();
    if cols < 2 {
        return Err(Error::Parameter("channels need at least one RIS column".into()));
    }
    if let Some(i) = channels.iter().position(|h| h.shape() != (m, cols)) {
        return Err(Error::Dimension(format!("channel {i} has a different shape")));
    }
    if n_v == 0 || n_v > cols {
        return Err(Error::Parameter(format!("N_v = {n_v} must lie in 1..={cols}")));
    }
    let total = binomial(cols, n_v);
    if total > options.max_combinations {
        return Err(Error::Parameter(format!(
            "exhaustive search needs C({cols}, {n_v}) = {total} combinations, above the cap of {}",
            options.max_combinations
        )));
    }
    let noise_seed = rng.next_u64();
    let noises: Vec<CMatrix> = (0..channels.len() as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = item_rng(noise_seed, label("dft-search-noise"), i);
            noise_matrix(m, n_v, sigma2, &mut r)
        })
        .collect();
    let truths: Vec<_> = channels.iter().map(vec_of).collect();
    let norm = (m * cols) as f64;

    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); channels.len()];
    let mut sets = Vec::with_capacity(total as usize);
    let mut best_avg = (f64::INFINITY, 0usize);
    for (ci, set) in Combinations::new(cols, n_v).enumerate() {
        let v = dft_column_subset(cols - 1, &set)?;
        let prepared = estimator.prepare(&v, sigma2)?;
        let errors: Vec<f64> = channels
            .par_iter()
            .zip(&noises)
            .zip(&truths)
            .map(|((h, n), truth)| {
                let y = vec_of(&(h * v.matrix() + n));
                let est = prepared.estimate(&y)?;
                Ok(frobenius_sq(&unvec(&(truth - est), m, cols)?))
            })
            .collect::<Result<_>>()?;
        for (b, &e) in best.iter_mut().zip(&errors) {
            if e < b.0 {
                *b = (e, ci);
            }
        }
        let mean = errors.iter().sum::<f64>() / (errors.len() as f64 * norm);
        if mean < best_avg.0 {
            best_avg = (mean, ci);
        }
        sets.push(set);
    }

    let mut counts = vec![0usize; cols];
    for &(_, ci) in &best {
        for &c in &sets[ci] {
            counts[c - 1] += 1;
        }
    }
    let denom = (channels.len() * n_v) as f64;
    Ok(DftSearchResult {
        n_v,
        per_sample_best: best.iter().map(|&(_, ci)| sets[ci].clone()).collect(),
        histogram: counts.iter().map(|&c| c as f64 / denom).collect(),
        best_average_set: sets[best_avg.1].clone(),
        best_average_nmse: best_avg.0,
        combinations: sets.len(),
    })
}

/// Histogram as `column,relative_frequency` CSV with 1-based columns.
pub fn histogram_csv(histogram: &[f64]) -> String {
    let mut out = String::from("column,relative_frequency\n");
    for (i, f) in histogram.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, f));
    }
    out
}

pub fn write_histogram_csv(histogram: &[f64], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(histogram_csv(histogram).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::rng::rng_from_seed;

    #[test]
    fn full_dft_is_orthogonal() {
        let v = dft_submatrix(4, 5).unwrap();
        let gram = v.matrix().adjoint() * v.matrix();
        let expect = CMatrix::identity(5, 5) * C64::new(5.0, 0.0);
        assert!(max_abs_diff(gram.as_slice(), expect.as_slice()) < 1e-12);
    }

    #[test]
    fn submatrix_entry_value() {
        let v = dft_submatrix(16, 8).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v.matrix()[(1, 1)] - C64::new(h, h)).norm() < 1e-15);
        assert_eq!(v.rows(), 17);
        assert!(v.max_modulus_error() < 1e-12);
    }

    #[test]
    fn reduced_submatrix_gram_is_not_diagonal() {
        let v = dft_submatrix(16, 8).unwrap();
        let gram = v.matrix().adjoint() * v.matrix();
        let off = (0..8)
            .flat_map(|i| (0..8).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| gram[(i, j)].norm())
            .fold(0.0, f64::max);
        // Column pairs with lag n: |Σ_{m=0}^{16} e^{j2π m n/8}| = 1.
        assert!((off - 1.0).abs() < 1e-12, "{off}");
    }

    #[test]
    fn subset_special_cases() {
        let dc = dft_column_subset(5, &[1]).unwrap();
        assert!(dc.matrix().iter().all(|z| (*z - ONE).norm() < 1e-15));
        let all: Vec<usize> = (1..=6).collect();
        assert_eq!(dft_column_subset(5, &all).unwrap(), dft_submatrix(5, 6).unwrap());
        let edge_set = [1, 2, 3, 4, 14, 15, 16, 17];
        let v = dft_column_subset(16, &edge_set).unwrap();
        assert_eq!(v.n_v(), 8);
        assert!(v.max_modulus_error() < 1e-12);
        assert!(dft_column_subset(3, &[1, 1]).is_err());
        assert!(dft_column_subset(3, &[5]).is_err());
        assert!(dft_column_subset(3, &[0]).is_err());
    }

    #[test]
    fn random_phases_invariants() {
        let a = random_phases(6, 4, &mut rng_from_seed(3)).unwrap();
        let b = random_phases(6, 4, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_modulus_error() < 1e-12);
        assert!((0..4).all(|n| a.matrix()[(0, n)] == ONE));
    }

    #[test]
    fn combination_enumeration() {
        let all: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(
            all,
            vec![vec![1, 2], vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4], vec![3, 4]]
        );
        assert_eq!(Combinations::new(17, 8).count(), 24_310);
        assert_eq!(binomial(17, 8), 24_310);
        assert_eq!(binomial(9, 4), 126);
        assert_eq!(Combinations::new(3, 0).count(), 0);
    }

    #[test]
    fn histogram_csv_schema() {
        let csv = histogram_csv(&[0.5, 0.25, 0.25]);
        assert_eq!(csv, "column,relative_frequency\n1,0.5\n2,0.25\n3,0.25\n");
    }
}
