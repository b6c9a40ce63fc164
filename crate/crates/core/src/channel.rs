//! Scenario-specific channel datasets.
//!
//! A geometric cluster model stands in for a full 3GPP simulator: the BS is a
//! half-wavelength ULA at the origin covering a 120° sector, the RIS is a URA
//! 500 m away with an LOS link to the BS, and mobile terminals are dropped
//! uniformly in the sector. The direct and MT-RIS channels are sums of
//! clustered rays around the terminal direction; the RIS-BS channel is Rician
//! around the fixed LOS outer product.
//!
//! Datasets persist in the `RISD` little-endian binary format (see [`save`]).

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::linalg::{complex_normal, CMatrix, CVector, C64};
use crate::model::{ChannelSample, SystemDims};
use crate::rng::{item_rng, label};

const BS_HEIGHT_M: f64 = 25.0;
const MT_HEIGHT_M: f64 = 1.5;
const RIS_DISTANCE_M: f64 = 500.0;
const MIN_MT_DISTANCE_M: f64 = 35.0;
const MAX_MT_DISTANCE_M: f64 = 450.0;
const SECTOR_HALF_WIDTH_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisOrientation {
    /// RIS aperture faces the BS array.
    Parallel,
    /// RIS aperture tilted downwards by the given angle in degrees.
    Downtilt(f64),
}

impl RisOrientation {
    fn tilt_rad(self) -> f64 {
        match self {
            RisOrientation::Parallel => 0.0,
            RisOrientation::Downtilt(deg) => deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// BS antennas `M`.
    pub bs_antennas: usize,
    /// RIS elements `L`; must equal `ris_rows * ris_cols`.
    pub ris_elements: usize,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub orientation: RisOrientation,
    pub cluster_count_direct: usize,
    pub cluster_count_mt_ris: usize,
    pub rays_per_cluster: usize,
    /// Std. deviation of ray angles around their cluster centre, degrees.
    pub angle_spread_deg: f64,
    /// Std. deviation of cluster centres around the terminal direction, degrees.
    pub cluster_offset_deg: f64,
    /// Rician K-factor of the RIS-BS link (linear). `inf` gives a pure LOS link.
    pub rician_k: f64,
    /// Azimuth of the RIS as seen from the BS broadside, degrees.
    pub ris_azimuth_deg: f64,
    /// Power of the direct channel relative to the cascaded one, dB.
    pub direct_power_db: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bs_antennas: 4,
            ris_elements: 8,
            ris_rows: 2,
            ris_cols: 4,
            orientation: RisOrientation::Parallel,
            cluster_count_direct: 3,
            cluster_count_mt_ris: 2,
            rays_per_cluster: 10,
            angle_spread_deg: 2.0,
            cluster_offset_deg: 10.0,
            rician_k: 10.0,
            ris_azimuth_deg: 20.0,
            direct_power_db: 0.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.bs_antennas == 0 || self.ris_elements == 0 {
            return bad("antenna and RIS element counts must be positive".into());
        }
        if self.ris_rows * self.ris_cols != self.ris_elements {
            return bad(format!(
                "RIS layout {}x{} does not have {} elements",
                self.ris_rows, self.ris_cols, self.ris_elements
            ));
        }
        if self.cluster_count_direct == 0 || self.cluster_count_mt_ris == 0 || self.rays_per_cluster == 0 {
            return bad("cluster and ray counts must be at least 1".into());
        }
        if !(self.rician_k >= 0.0) {
            return bad(format!("Rician K-factor must be nonnegative, got {}", self.rician_k));
        }
        for (name, v) in [
            ("angle_spread_deg", self.angle_spread_deg),
            ("cluster_offset_deg", self.cluster_offset_deg),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !self.ris_azimuth_deg.is_finite() || !self.direct_power_db.is_finite() {
            return bad("angles and powers must be finite".into());
        }
        if let RisOrientation::Downtilt(deg) = self.orientation {
            if !deg.is_finite() || deg.abs() >= 90.0 {
                return bad(format!("downtilt must lie in (-90, 90) degrees, got {deg}"));
            }
        }
        Ok(())
    }

    pub fn dims(&self, n_v: usize) -> Result<SystemDims> {
        SystemDims::new(self.bs_antennas, self.ris_elements, n_v)
    }
}

/// ULA response `exp(j π m sin θ)`.
pub fn ula_steering(m: usize, theta: f64) -> CVector {
    let s = theta.sin();
    CVector::from_fn(m, |i, _| C64::from_polar(1.0, PI * i as f64 * s))
}

/// URA response for azimuth `psi` and elevation `eps` relative to broadside;
/// element `row * cols + col`.
pub fn ura_steering(rows: usize, cols: usize, psi: f64, eps: f64) -> CVector {
    let u = psi.sin() * eps.cos();
    let w = eps.sin();
    CVector::from_fn(rows * cols, |i, _| {
        let (r, c) = (i / cols, i % cols);
        C64::from_polar(1.0, PI * (c as f64 * u + r as f64 * w))
    })
}

struct Geometry {
    ris_pos: [f64; 2],
    ris_normal: [f64; 2],
    los: CMatrix,
}

impl Geometry {
    fn new(cfg: &ScenarioConfig) -> Self {
        let alpha = cfg.ris_azimuth_deg.to_radians();
        let ris_pos = [RIS_DISTANCE_M * alpha.cos(), RIS_DISTANCE_M * alpha.sin()];
        let ris_normal = [-alpha.cos(), -alpha.sin()];
        // BS sits on the RIS broadside at equal height.
        let a_bs = ula_steering(cfg.bs_antennas, alpha);
        let a_ris = ura_steering(cfg.ris_rows, cfg.ris_cols, 0.0, cfg.orientation.tilt_rad());
        let los = &a_bs * a_ris.transpose();
        Self {
            ris_pos,
            ris_normal,
            los,
        }
    }
}

fn cluster_powers<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..count).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    g * std
}

fn draw_sample<R: Rng + ?Sized>(cfg: &ScenarioConfig, geo: &Geometry, rng: &mut R) -> ChannelSample {
    let m = cfg.bs_antennas;
    let l = cfg.ris_elements;
    let spread = cfg.angle_spread_deg.to_radians();
    let offset = cfg.cluster_offset_deg.to_radians();
    let rays = cfg.rays_per_cluster;

    // Terminal drop, uniform over the annular sector.
    let phi = rng.random_range(-SECTOR_HALF_WIDTH_DEG..=SECTOR_HALF_WIDTH_DEG).to_radians();
    let (r2_lo, r2_hi) = (MIN_MT_DISTANCE_M.powi(2), MAX_MT_DISTANCE_M.powi(2));
    let r = rng.random_range(r2_lo..=r2_hi).sqrt();
    let mt = [r * phi.cos(), r * phi.sin()];

    // Direct channel.
    let direct_amp = 10f64.powf(cfg.direct_power_db / 20.0);
    let mut h0 = CVector::zeros(m);
    for p in cluster_powers(cfg.cluster_count_direct, rng) {
        let centre = phi + gaussian(rng, offset);
        for _ in 0..rays {
            let g = complex_normal(rng, p / rays as f64) * direct_amp;
            h0 += ula_steering(m, centre + gaussian(rng, spread)) * g;
        }
    }

    // MT-RIS channel, angles relative to the RIS broadside.
    let d = [mt[0] - geo.ris_pos[0], mt[1] - geo.ris_pos[1]];
    let cross = geo.ris_normal[0] * d[1] - geo.ris_normal[1] * d[0];
    let dot = geo.ris_normal[0] * d[0] + geo.ris_normal[1] * d[1];
    let psi = cross.atan2(dot);
    let horizontal = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let eps = (MT_HEIGHT_M - BS_HEIGHT_M).atan2(horizontal) + cfg.orientation.tilt_rad();
    let mut h1 = CVector::zeros(l);
    for p in cluster_powers(cfg.cluster_count_mt_ris, rng) {
        let c_psi = psi + gaussian(rng, offset);
        let c_eps = eps + gaussian(rng, offset / 2.0);
        for _ in 0..rays {
            let g = complex_normal(rng, p / rays as f64);
            let a = ura_steering(
                cfg.ris_rows,
                cfg.ris_cols,
                c_psi + gaussian(rng, spread),
                c_eps + gaussian(rng, spread / 2.0),
            );
            h1 += a * g;
        }
    }

    // RIS-BS channel.
    let k = cfg.rician_k;
    let (los_w, nlos_w) = if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };
    let scatter = CMatrix::from_fn(m, l, |_, _| complex_normal(rng, 1.0));
    let h2 = if nlos_w == 0.0 {
        geo.los.clone()
    } else {
        &geo.los * C64::new(los_w, 0.0) + scatter * C64::new(nlos_w, 0.0)
    };

    ChannelSample::new(h0, h1, h2).expect("generator dimensions are consistent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    /// Generator settings, absent for imported datasets.
    pub config: Option<ScenarioConfig>,
    pub m: usize,
    pub l: usize,
    pub samples: Vec<ChannelSample>,
    pub normalized: bool,
}

impl ChannelDataset {
    pub fn new(m: usize, l: usize, samples: Vec<ChannelSample>) -> Result<Self> {
        if m == 0 || l == 0 {
            return Err(Error::Parameter("M and L must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| s.m() != m || s.l() != l) {
            return Err(Error::Dimension(format!(
                "sample {i} has M={}, L={} but the dataset declares M={m}, L={l}",
                samples[i].m(),
                samples[i].l()
            )));
        }
        Ok(Self {
            config: None,
            m,
            l,
            samples,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel_dim(&self) -> usize {
        self.m * (self.l + 1)
    }

    /// Empirical `(1/N) Σ |vec(H_n)|^2`.
    pub fn second_moment(&self) -> f64 {
        let total: f64 = self
            .samples
            .iter()
            .map(|s| s.composite().iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        total / self.samples.len() as f64
    }

    /// Composite channel matrices.
    pub fn composites(&self) -> Vec<CMatrix> {
        self.samples.iter().map(|s| s.composite().clone()).collect()
    }

    /// Samples `range` as a new dataset sharing the metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::Parameter(format!(
                "sample range {range:?} outside dataset of {} samples",
                self.len()
            )));
        }
        Ok(Self {
            config: self.config.clone(),
            m: self.m,
            l: self.l,
            samples: self.samples[range].to_vec(),
            normalized: self.normalized,
        })
    }
}

/// Draw `n` samples. Sample `i` uses its own stream derived from `(seed, i)`.
pub fn generate(config: &ScenarioConfig, n: usize) -> Result<ChannelDataset> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Parameter("dataset size must be at least 1".into()));
    }
    let geo = Geometry::new(config);
    let samples: Vec<ChannelSample> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(config.seed, label("channel-sample"), i);
            draw_sample(config, &geo, &mut rng)
        })
        .collect();
    Ok(ChannelDataset {
        config: Some(config.clone()),
        m: config.bs_antennas,
        l: config.ris_elements,
        samples,
        normalized: false,
    })
}

/// Common scale `c = sqrt(N M (L+1) / Σ |vec(H_n)|^2)`.
pub fn normalization_scale(dataset: &ChannelDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot normalize an empty dataset".into()));
    }
    let moment = dataset.second_moment();
    if !(moment > 0.0) || !moment.is_finite() {
        return Err(Error::DegenerateData(format!(
            "dataset second moment is {moment}, cannot normalize"
        )));
    }
    Ok((dataset.channel_dim() as f64 / moment).sqrt())
}

/// Rescale so that `E|vec(H)|^2 = M (L+1)` over the dataset.
pub fn normalize(dataset: &ChannelDataset) -> Result<ChannelDataset> {
    let c = normalization_scale(dataset)?;
    Ok(ChannelDataset {
        config: dataset.config.clone(),
        m: dataset.m,
        l: dataset.l,
        samples: dataset.samples.iter().map(|s| s.scaled(c)).collect(),
        normalized: true,
    })
}

pub const DATASET_MAGIC: [u8; 4] = *b"RISD";
pub const DATASET_VERSION: u16 = 1;
const DATASET_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 1;

/// Write the dataset as
/// `"RISD" | version u16 | M u32 | L u32 | N u64 | flags u8 | payload`,
/// where each sample is `h0 (M) | h1 (L) | H2 (M·L, column-major)` and each
/// complex number is two little-endian f64 (re, im). Flag bit 0 marks a
/// normalized dataset.
pub fn save(dataset: &ChannelDataset, path: &Path) -> Result<()> {
    let bytes = encode(dataset)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode(dataset: &ChannelDataset) -> Result<Vec<u8>> {
    let m = u32::try_from(dataset.m).map_err(|_| Error::Parameter("M exceeds u32".into()))?;
    let l = u32::try_from(dataset.l).map_err(|_| Error::Parameter("L exceeds u32".into()))?;
    let per_sample = dataset.m + dataset.l + dataset.m * dataset.l;
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + dataset.len() * per_sample * 16);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&l.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    out.push(u8::from(dataset.normalized));
    for s in &dataset.samples {
        for z in s.h0.iter().chain(s.h1.iter()).chain(s.h2.iter()) {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<ChannelDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn read_complex(chunk: &[u8]) -> C64 {
    let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
    let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
    C64::new(re, im)
}

pub fn decode(bytes: &[u8]) -> Result<ChannelDataset> {
    if bytes.len() < DATASET_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != DATASET_MAGIC {
            return Err(FormatError::BadMagic {
                expected: DATASET_MAGIC,
                found: bytes[..4].try_into().unwrap(),
            }
            .into());
        }
        return Err(FormatError::Truncated {
            expected: DATASET_HEADER_LEN as u64,
            found: bytes.len() as u64,
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != DATASET_MAGIC {
        return Err(FormatError::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let m = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let l = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let flags = bytes[22];
    if m == 0 || l == 0 {
        return Err(FormatError::Inconsistent(format!("M={m} and L={l} must be positive")).into());
    }
    if flags & !1 != 0 {
        return Err(FormatError::Inconsistent(format!("unknown flag bits {flags:#04x}")).into());
    }
    let per_sample = (m + l)
        .checked_add(m.saturating_mul(l))
        .and_then(|c| c.checked_mul(16))
        .ok_or_else(|| FormatError::Inconsistent("sample size overflows".into()))?;
    let expected = (per_sample as u64)
        .checked_mul(n)
        .ok_or_else(|| FormatError::Inconsistent(format!("N={n} overflows the payload size")))?;
    let found = (bytes.len() - DATASET_HEADER_LEN) as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(FormatError::TrailingBytes(found - expected).into());
    }
    let payload = &bytes[DATASET_HEADER_LEN..];
    let samples = payload
        .chunks_exact(per_sample)
        .map(|chunk| {
            let mut values = chunk.chunks_exact(16).map(read_complex);
            let h0 = CVector::from_iterator(m, values.by_ref().take(m));
            let h1 = CVector::from_iterator(l, values.by_ref().take(l));
            let h2 = CMatrix::from_iterator(m, l, values);
            ChannelSample::new(h0, h1, h2)
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(FormatError::Inconsistent("dataset holds no samples".into()).into());
    }
    let mut ds = ChannelDataset::new(m, l, samples)?;
    ds.normalized = flags & 1 == 1;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            bs_antennas: 3,
            ris_elements: 4,
            ris_rows: 2,
            ris_cols: 2,
            seed: 42,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn steering_vectors_are_unit_modulus() {
        for z in ula_steering(8, 0.7).iter().chain(ura_steering(3, 4, -0.4, 0.2).iter()) {
            assert!((z.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        assert!(c.validate().is_ok());
        c.ris_rows = 3;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.cluster_count_direct = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.rician_k = -1.0;
        assert!(c.validate().is_err());
        assert!(generate(&small_config(), 0).is_err());
    }

    #[test]
    fn degenerate_limit_gives_fixed_los() {
        let cfg = ScenarioConfig {
            cluster_count_direct: 1,
            angle_spread_deg: 0.0,
            rician_k: f64::INFINITY,
            ..small_config()
        };
        let ds = generate(&cfg, 5).unwrap();
        let first = &ds.samples[0].h2;
        for s in &ds.samples {
            assert_eq!(&s.h2, first);
        }
        let sv = nalgebra::SVD::new(first.clone(), false, false);
        assert!(sv.singular_values[1] < 1e-12 * sv.singular_values[0]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config(), 20).unwrap();
        let b = generate(&small_config(), 20).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioConfig { seed: 43, ..small_config() }, 20).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn normalize_closed_form_and_idempotence() {
        let h0 = CVector::from_element(2, C64::new(2.0, 0.0));
        let h1 = CVector::from_element(1, C64::new(1.0, 0.0));
        let h2 = CMatrix::from_element(2, 1, C64::new(0.0, 2.0));
        // |vec H|^2 = 16 = 4 * M (L+1)
        let ds = ChannelDataset::new(2, 1, vec![ChannelSample::new(h0, h1, h2).unwrap()]).unwrap();
        assert!((normalization_scale(&ds).unwrap() - 0.5).abs() < 1e-15);
        let n = normalize(&ds).unwrap();
        assert!(n.normalized);
        assert!((normalization_scale(&n).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        let s = ChannelSample::new(CVector::zeros(2), CVector::zeros(2), CMatrix::zeros(2, 2)).unwrap();
        let ds = ChannelDataset::new(2, 2, vec![s]).unwrap();
        assert!(matches!(normalize(&ds), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn decode_rejects_bad_magic_and_truncation() {
        let ds = generate(&small_config(), 2).unwrap();
        let mut bytes = encode(&ds).unwrap();
        let good = decode(&bytes).unwrap();
        assert_eq!(good, ChannelDataset { config: None, ..ds.clone() });

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode(&wrong), Err(Error::Format(FormatError::BadMagic { .. }))));

        let per_sample = (3 + 4 + 12) * 16;
        bytes.truncate(bytes.len() - per_sample);
        assert!(matches!(decode(&bytes), Err(Error::Format(FormatError::Truncated { .. }))));

        let mut extra = encode(&ds).unwrap();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Format(FormatError::TrailingBytes(1)))));

        let mut version = encode(&ds).unwrap();
        version[4] = 9;
        assert!(matches!(decode(&version), Err(Error::Format(FormatError::UnsupportedVersion(9)))));

        let mut zero_m = encode(&ds).unwrap();
        zero_m[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&zero_m), Err(Error::Format(FormatError::Inconsistent(_)))));
    }
}
