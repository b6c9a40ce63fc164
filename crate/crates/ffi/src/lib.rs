//! C interface to `risphase`.
//!
//! Objects cross the boundary as opaque handles created by the constructor
//! functions and released by the matching `ris_*_free`. Every fallible call
//! returns a [`RisStatus`]; on failure the message is available from
//! [`ris_last_error_message`] on the same thread until the next failing call.
//!
//! Complex arrays are [`RisComplex`] pairs in column-major order, so `vec(H)`
//! of an `M x (L+1)` channel has length `M (L+1)`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use num_complex::Complex64;
use risphase::channel::{self, ChannelDataset, RisOrientation, ScenarioConfig};
use risphase::estimators::{
    gmm_fit, load_gmm, save_gmm, ChannelEstimator, GmmFitOptions, GmmModel, LsEstimator, PreparedEstimator,
    SampleCovEstimator,
};
use risphase::learn::{load_checkpoint, PhaseCnnModel};
use risphase::linalg::{CMatrix, CVector};
use risphase::model::{observe, PhaseMatrix};
use risphase::phase::{dft_column_subset, dft_submatrix, random_phases};
use risphase::rng::rng_from_seed;
use risphase::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    DegenerateData = 4,
    Numerical = 5,
    Format = 6,
    State = 7,
    Training = 8,
    MissingArtifact = 9,
    Io = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RisComplex {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for RisComplex {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<RisComplex> for Complex64 {
    fn from(z: RisComplex) -> Self {
        Complex64::new(z.re, z.im)
    }
}

/// Channel samples, each an `M x (L+1)` composite channel.
pub struct RisDataset {
    inner: ChannelDataset,
}

/// Phase book `V` of shape `(L+1) x N_v`.
pub struct RisPhaseMatrix {
    inner: PhaseMatrix,
}

/// A channel estimator: least squares, sample-covariance LMMSE, GMM or a
/// trained CNN.
pub struct RisEstimator {
    inner: EstimatorKind,
}

enum EstimatorKind {
    Ls(LsEstimator),
    SampleCov(SampleCovEstimator),
    Gmm(GmmModel),
    Cnn(Box<PhaseCnnModel>),
}

impl EstimatorKind {
    fn as_dyn(&self) -> &dyn ChannelEstimator {
        match self {
            EstimatorKind::Ls(e) => e,
            EstimatorKind::SampleCov(e) => e,
            EstimatorKind::Gmm(e) => e,
            EstimatorKind::Cnn(e) => e.as_ref(),
        }
    }
}

/// An estimator bound to one phase book and noise variance.
pub struct RisPrepared {
    inner: Box<dyn PreparedEstimator>,
    rows: usize,
    n_v: usize,
    /// BS antennas fixed by the estimator's model; LS infers it from `y`.
    antennas: Option<usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RisStatus {
    match err {
        Error::Dimension(_) => RisStatus::Dimension,
        Error::Parameter(_) | Error::Config(_) => RisStatus::InvalidArgument,
        Error::DegenerateData(_) => RisStatus::DegenerateData,
        Error::Numerical(_) => RisStatus::Numerical,
        Error::Format(_) => RisStatus::Format,
        Error::State(_) => RisStatus::State,
        Error::Training { .. } => RisStatus::Training,
        Error::MissingArtifact { .. } => RisStatus::MissingArtifact,
        Error::Io { .. } => RisStatus::Io,
    }
}

/// Failure raised inside the shim itself.
struct Fail(RisStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RisStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RisStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RisStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            RisStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len != needed {
        return Err(Fail(
            RisStatus::Dimension,
            format!("{what} has length {len}, expected {needed}"),
        ));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn write_complex(dst: &mut [RisComplex], src: impl Iterator<Item = Complex64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.into();
    }
}

fn to_vector(src: &[RisComplex]) -> CVector {
    CVector::from_iterator(src.len(), src.iter().map(|&z| z.into()))
}

/// Message of the last failing call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ris_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ris_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Noise variance `10^(-snr_db/10)` for unit-power channels.
#[no_mangle]
pub extern "C" fn ris_snr_to_noise_variance(snr_db: f64) -> f64 {
    risphase::model::snr_to_noise_variance(snr_db)
}

/// Generate `count` channels with the default scenario resized to `m` BS
/// antennas and a `ris_rows x ris_cols` RIS. A positive `downtilt_deg` tilts
/// the RIS; zero keeps it parallel. With `normalize` set the dataset is
/// scaled to unit average power per entry.
#[no_mangle]
pub unsafe extern "C" fn ris_dataset_generate(
    m: usize,
    ris_rows: usize,
    ris_cols: usize,
    downtilt_deg: f64,
    count: usize,
    seed: u64,
    normalize: bool,
    out: *mut *mut RisDataset,
) -> RisStatus {
    guard(|| {
        let orientation = if downtilt_deg == 0.0 {
            RisOrientation::Parallel
        } else {
            RisOrientation::Downtilt(downtilt_deg)
        };
        let config = ScenarioConfig {
            bs_antennas: m,
            ris_elements: ris_rows * ris_cols,
            ris_rows,
            ris_cols,
            orientation,
            seed,
            ..ScenarioConfig::default()
        };
        let mut data = channel::generate(&config, count)?;
        if normalize {
            data = channel::normalize(&data)?;
        }
        emit(out, RisDataset { inner: data })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_dataset_load(path: *const c_char, out: *mut *mut RisDataset) -> RisStatus {
    guard(|| {
        let data = channel::load(&path_arg(path)?)?;
        emit(out, RisDataset { inner: data })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_dataset_save(dataset: *const RisDataset, path: *const c_char) -> RisStatus {
    guard(|| {
        let ds = borrow(dataset, "dataset")?;
        channel::save(&ds.inner, &path_arg(path)?)?;
        Ok(())
    })
}

/// Number of samples, `M` and `L`. Any output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ris_dataset_shape(
    dataset: *const RisDataset,
    count: *mut usize,
    m: *mut usize,
    l: *mut usize,
) -> RisStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        for (p, v) in [(count, ds.len()), (m, ds.m), (l, ds.l)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copy `vec(H)` of sample `index` into `out` of length `M (L+1)`.
#[no_mangle]
pub unsafe extern "C" fn ris_dataset_channel(
    dataset: *const RisDataset,
    index: usize,
    out: *mut RisComplex,
    len: usize,
) -> RisStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        let sample = ds
            .samples
            .get(index)
            .ok_or_else(|| invalid(format!("sample index {index} out of range for {} samples", ds.len())))?;
        let dst = output(out, len, ds.channel_dim(), "channel buffer")?;
        write_complex(dst, sample.composite().iter().copied());
        Ok(())
    })
}

/// `y = vec(H V + N)` for sample `index`, with noise drawn from `seed`.
#[no_mangle]
pub unsafe extern "C" fn ris_dataset_observe(
    dataset: *const RisDataset,
    index: usize,
    phases: *const RisPhaseMatrix,
    noise_variance: f64,
    seed: u64,
    out: *mut RisComplex,
    len: usize,
) -> RisStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        let v = &borrow(phases, "phase matrix")?.inner;
        let sample = ds
            .samples
            .get(index)
            .ok_or_else(|| invalid(format!("sample index {index} out of range for {} samples", ds.len())))?;
        let obs = observe(sample.composite(), v, noise_variance, &mut rng_from_seed(seed))?;
        let dst = output(out, len, obs.y.len(), "observation buffer")?;
        write_complex(dst, obs.y.iter().copied());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_dataset_free(dataset: *mut RisDataset) {
    release(dataset)
}

/// First `n_v` columns of the `(L+1)`-point DFT matrix.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_dft(l: usize, n_v: usize, out: *mut *mut RisPhaseMatrix) -> RisStatus {
    guard(|| emit(out, RisPhaseMatrix { inner: dft_submatrix(l, n_v)? }))
}

/// DFT columns picked by 1-based index; column 1 is always required.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_dft_columns(
    l: usize,
    columns: *const usize,
    count: usize,
    out: *mut *mut RisPhaseMatrix,
) -> RisStatus {
    guard(|| {
        let cols = input(columns, count, "columns")?;
        emit(out, RisPhaseMatrix { inner: dft_column_subset(l, cols)? })
    })
}

/// Uniformly random phases with the first row fixed to 1.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_random(
    l: usize,
    n_v: usize,
    seed: u64,
    out: *mut *mut RisPhaseMatrix,
) -> RisStatus {
    guard(|| {
        let v = random_phases(l, n_v, &mut rng_from_seed(seed))?;
        emit(out, RisPhaseMatrix { inner: v })
    })
}

/// Phase book from `rows * n_v` column-major entries. Entries must have unit
/// modulus and the first row must be all ones.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_from_entries(
    rows: usize,
    n_v: usize,
    entries: *const RisComplex,
    out: *mut *mut RisPhaseMatrix,
) -> RisStatus {
    guard(|| {
        let len = rows.checked_mul(n_v).ok_or_else(|| invalid("phase matrix size overflows"))?;
        let src = input(entries, len, "entries")?;
        let m = CMatrix::from_iterator(rows, n_v, src.iter().map(|&z| z.into()));
        emit(out, RisPhaseMatrix { inner: PhaseMatrix::new(m)? })
    })
}

/// `L + 1` rows and `N_v` columns. Either output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_shape(
    phases: *const RisPhaseMatrix,
    rows: *mut usize,
    n_v: *mut usize,
) -> RisStatus {
    guard(|| {
        let v = &borrow(phases, "phase matrix")?.inner;
        if !rows.is_null() {
            *rows = v.rows();
        }
        if !n_v.is_null() {
            *n_v = v.n_v();
        }
        Ok(())
    })
}

/// Copy the column-major entries into `out` of length `(L+1) N_v`.
#[no_mangle]
pub unsafe extern "C" fn ris_phase_entries(
    phases: *const RisPhaseMatrix,
    out: *mut RisComplex,
    len: usize,
) -> RisStatus {
    guard(|| {
        let v = borrow(phases, "phase matrix")?.inner.matrix();
        let dst = output(out, len, v.len(), "entry buffer")?;
        write_complex(dst, v.iter().copied());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_phase_free(phases: *mut RisPhaseMatrix) {
    release(phases)
}

/// Least-squares estimator `vec(Y V^+)`.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_ls(out: *mut *mut RisEstimator) -> RisStatus {
    guard(|| emit(out, RisEstimator { inner: EstimatorKind::Ls(LsEstimator) }))
}

/// LMMSE estimator with the sample covariance of `dataset`.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_sample_cov(
    dataset: *const RisDataset,
    out: *mut *mut RisEstimator,
) -> RisStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        let samples: Vec<CVector> = ds.samples.iter().map(|s| s.vectorized()).collect();
        let est = SampleCovEstimator::fit(&samples)?;
        emit(out, RisEstimator { inner: EstimatorKind::SampleCov(est) })
    })
}

/// Fit a `components`-component Gaussian mixture to `dataset` by EM. The
/// covariance floor is `relative_floor` times the mean per-entry power.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_gmm_fit(
    dataset: *const RisDataset,
    components: usize,
    max_iter: usize,
    relative_floor: f64,
    seed: u64,
    out: *mut *mut RisEstimator,
) -> RisStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        let samples: Vec<CVector> = ds.samples.iter().map(|s| s.vectorized()).collect();
        let mut opts = GmmFitOptions::new(components).with_relative_floor(&samples, relative_floor);
        opts.max_iter = max_iter;
        let (model, _) = gmm_fit(&samples, &opts, &mut rng_from_seed(seed))?;
        emit(out, RisEstimator { inner: EstimatorKind::Gmm(model) })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_estimator_gmm_load(path: *const c_char, out: *mut *mut RisEstimator) -> RisStatus {
    guard(|| {
        let model = load_gmm(&path_arg(path)?)?;
        emit(out, RisEstimator { inner: EstimatorKind::Gmm(model) })
    })
}

/// Save a GMM estimator. Other estimator kinds fail with `State`.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_gmm_save(estimator: *const RisEstimator, path: *const c_char) -> RisStatus {
    guard(|| match &borrow(estimator, "estimator")?.inner {
        EstimatorKind::Gmm(model) => Ok(save_gmm(model, &path_arg(path)?)?),
        _ => Err(Fail(RisStatus::State, "estimator is not a GMM".into())),
    })
}

/// Load a trained CNN checkpoint. The CNN only accepts its own learned phase
/// book, which is returned through `phases_out` when that is not NULL.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_cnn_load(
    path: *const c_char,
    out: *mut *mut RisEstimator,
    phases_out: *mut *mut RisPhaseMatrix,
) -> RisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output handle"));
        }
        let model = load_checkpoint(&path_arg(path)?)?;
        if !phases_out.is_null() {
            emit(phases_out, RisPhaseMatrix { inner: model.export_phases() })?;
        }
        emit(out, RisEstimator { inner: EstimatorKind::Cnn(Box::new(model)) })
    })
}

/// Short estimator name: "ls", "sample_cov", "gmm" or "cnn".
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_name(estimator: *const RisEstimator) -> *const c_char {
    let Some(est) = estimator.as_ref() else {
        return ptr::null();
    };
    let name: &'static CStr = match est.inner {
        EstimatorKind::Ls(_) => c"ls",
        EstimatorKind::SampleCov(_) => c"sample_cov",
        EstimatorKind::Gmm(_) => c"gmm",
        EstimatorKind::Cnn(_) => c"cnn",
    };
    name.as_ptr()
}

#[no_mangle]
pub unsafe extern "C" fn ris_estimator_free(estimator: *mut RisEstimator) {
    release(estimator)
}

/// Bind an estimator to a phase book and noise variance. The estimator and
/// phase book may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn ris_estimator_prepare(
    estimator: *const RisEstimator,
    phases: *const RisPhaseMatrix,
    noise_variance: f64,
    out: *mut *mut RisPrepared,
) -> RisStatus {
    guard(|| {
        let est = &borrow(estimator, "estimator")?.inner;
        let v = &borrow(phases, "phase matrix")?.inner;
        let prepared = est.as_dyn().prepare(v, noise_variance)?;
        let antennas = match est {
            EstimatorKind::Gmm(g) => Some(g.dim() / v.rows()),
            EstimatorKind::SampleCov(s) => Some(s.covariance().nrows() / v.rows()),
            EstimatorKind::Cnn(c) => Some(c.dims().m),
            EstimatorKind::Ls(_) => None,
        };
        emit(
            out,
            RisPrepared {
                inner: prepared,
                rows: v.rows(),
                n_v: v.n_v(),
                antennas,
            },
        )
    })
}

/// Estimate `vec(H)` (length `M (L+1)`) from one observation `y` (length
/// `M N_v`).
#[no_mangle]
pub unsafe extern "C" fn ris_prepared_estimate(
    prepared: *const RisPrepared,
    y: *const RisComplex,
    y_len: usize,
    out: *mut RisComplex,
    out_len: usize,
) -> RisStatus {
    guard(|| {
        let p = borrow(prepared, "prepared estimator")?;
        let m = p.antennas.unwrap_or(y_len / p.n_v);
        if m == 0 || y_len != m * p.n_v {
            return Err(Fail(
                RisStatus::Dimension,
                format!("observation has length {y_len}, expected M * {} with M > 0", p.n_v),
            ));
        }
        let h = p.inner.estimate(&to_vector(input(y, y_len, "observation")?))?;
        let dst = output(out, out_len, m * p.rows, "estimate buffer")?;
        write_complex(dst, h.iter().copied());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ris_prepared_free(prepared: *mut RisPrepared) {
    release(prepared)
}

/// `mean |h - ĥ|^2 / dim` over `count` vectors of length `dim`, both stored
/// back to back.
#[no_mangle]
pub unsafe extern "C" fn ris_nmse(
    truth: *const RisComplex,
    estimate: *const RisComplex,
    count: usize,
    dim: usize,
    out: *mut f64,
) -> RisStatus {
    guard(|| {
        if count == 0 || dim == 0 {
            return Err(invalid("count and dim must be positive"));
        }
        let len = count.checked_mul(dim).ok_or_else(|| invalid("count * dim overflows"))?;
        let a = input(truth, len, "truth")?;
        let b = input(estimate, len, "estimate")?;
        if out.is_null() {
            return Err(null("output"));
        }
        let err: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (Complex64::from(*x) - Complex64::from(*y)).norm_sqr())
            .sum();
        *out = err / len as f64;
        Ok(())
    })
}
