//! `RCNN` checkpoint codec.
//!
//! Layout, little-endian:
//! `"RCNN" | version u16 | M u32 | L u32 | N_v u32 | flags u8 | snr_db f64 |
//! layers u32 | per layer (in u32, out u32, activation u8, batch_norm u8) |
//! resize_in u32 | Φ ((L+1)·N_v, column-major) | per layer: kernels in
//! (out, in, ky, kx) order, biases, and if present gamma, beta, running
//! mean, running var | resize weights (column-major, row 2w'+part, column
//! w·in+c) | resize biases`. All parameters are f64. Flag bit 0 marks a
//! locked first phase row.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::cnn::{Activation, BatchNorm, Cnn, ConvLayer, ResizeLayer};
use super::joint::PhaseCnnModel;
use super::phase_layer::PhaseLayer;
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &PhaseCnnModel) -> Vec<u8> {
    let cnn = &model.cnn;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cnn.height, cnn.out_width - 1, cnn.in_width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(u8::from(model.phase.first_row_locked));
    out.extend_from_slice(&model.snr_db.to_le_bytes());
    out.extend_from_slice(&(cnn.layers.len() as u32).to_le_bytes());
    for l in &cnn.layers {
        out.extend_from_slice(&(l.in_ch as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_ch as u32).to_le_bytes());
        out.push(l.activation.id());
        out.push(u8::from(l.batch_norm.is_some()));
    }
    out.extend_from_slice(&(cnn.resize.in_ch as u32).to_le_bytes());
    let mut put = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(model.phase.phi.as_slice());
    for l in &cnn.layers {
        for o in 0..l.out_ch {
            for i in 0..l.in_ch {
                for ky in 0..3 {
                    for kx in 0..3 {
                        put(&[l.kernel(o, i, ky, kx)]);
                    }
                }
            }
        }
        put(&l.bias);
        if let Some(bn) = &l.batch_norm {
            put(&bn.gamma);
            put(&bn.beta);
            put(&bn.running_mean);
            put(&bn.running_var);
        }
    }
    put(cnn.resize.weight.as_slice());
    put(&cnn.resize.bias);
    out
}

pub fn save_checkpoint(model: &PhaseCnnModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PhaseCnnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }
            .into()),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| FormatError::Inconsistent("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PhaseCnnModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let (m, l, n_v) = (r.u32()?, r.u32()?, r.u32()?);
    let flags = r.u8()?;
    if flags & !1 != 0 {
        return Err(FormatError::Inconsistent(format!("unknown flag bits {flags:#04x}")).into());
    }
    if m == 0 || n_v == 0 {
        return Err(FormatError::Inconsistent(format!("M={m} and N_v={n_v} must be positive")).into());
    }
    let snr_db = r.f64()?;
    let n_layers = r.u32()?;
    let mut table = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let (i, o) = (r.u32()?, r.u32()?);
        let act = r.u8()?;
        let activation = Activation::from_id(act)
            .ok_or_else(|| FormatError::Inconsistent(format!("unknown activation id {act}")))?;
        let bn = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(FormatError::Inconsistent(format!("bad batch-norm flag {b}")).into()),
        };
        if i == 0 || o == 0 || i > 1 << 16 || o > 1 << 16 {
            return Err(FormatError::Inconsistent(format!("layer shape {i}->{o} is invalid")).into());
        }
        table.push((i, o, activation, bn));
    }
    let resize_in = r.u32()?;
    let phi = DMatrix::from_vec(l + 1, n_v, r.f64s((l + 1) * n_v)?);
    let mut layers = Vec::with_capacity(table.len());
    for (i, o, activation, bn) in table {
        let mut layer = ConvLayer::zeros(i, o, activation, false);
        let kernels = r.f64s(o * i * 9)?;
        let mut it = kernels.into_iter();
        for oo in 0..o {
            for ii in 0..i {
                for ky in 0..3 {
                    for kx in 0..3 {
                        layer.set_kernel(oo, ii, ky, kx, it.next().unwrap());
                    }
                }
            }
        }
        layer.bias = r.f64s(o)?;
        if bn {
            layer.batch_norm = Some(BatchNorm {
                gamma: r.f64s(o)?,
                beta: r.f64s(o)?,
                running_mean: r.f64s(o)?,
                running_var: r.f64s(o)?,
            });
        }
        layers.push(layer);
    }
    let mut resize = ResizeLayer::zeros(resize_in, n_v, l + 1);
    resize.weight = DMatrix::from_vec(2 * (l + 1), resize_in * n_v, r.f64s(2 * (l + 1) * resize_in * n_v)?);
    resize.bias = r.f64s(2 * (l + 1))?;
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes((bytes.len() - r.pos) as u64).into());
    }
    let cnn = Cnn::from_parts(m, n_v, l + 1, layers, resize)
        .map_err(|e| FormatError::Inconsistent(format!("layer table does not chain: {e}")))?;
    let phase = PhaseLayer::new(phi, flags & 1 == 1)
        .map_err(|e| FormatError::Inconsistent(format!("phase angles: {e}")))?;
    PhaseCnnModel::new(phase, cnn, snr_db)
}
