use nalgebra::DMatrix;
use rand::Rng;

use super::adam::Adam;
use super::cnn::{channels_to_output, observations_to_planes, output_to_channels, planes_to_observations, Architecture, Cnn, CnnGradients};
use super::phase_layer::PhaseLayer;
use crate::error::{Error, Result};
use crate::estimators::{ChannelEstimator, PreparedEstimator};
use crate::linalg::{max_abs_diff, unvec, vec_of, CMatrix, CVector, C64};
use crate::model::{PhaseMatrix, SystemDims};

/// Learned phase book plus the CNN that inverts it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCnnModel {
    pub phase: PhaseLayer,
    pub cnn: Cnn,
    /// SNR the model was trained for.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointGradients {
    pub phi: DMatrix<f64>,
    pub cnn: CnnGradients,
}

impl PhaseCnnModel {
    /// Random angles uniform on `[0, 2π)` and randomly initialized CNN weights.
    pub fn random<R: Rng + ?Sized>(
        dims: SystemDims,
        arch: &Architecture,
        first_row_locked: bool,
        snr_db: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let phi = DMatrix::from_fn(dims.l + 1, dims.n_v, |_, _| rng.random::<f64>() * std::f64::consts::TAU);
        let phase = PhaseLayer::new(phi, first_row_locked)?;
        let cnn = Cnn::random(dims.m, dims.n_v, dims.l + 1, arch, rng)?;
        Self::new(phase, cnn, snr_db)
    }

    pub fn new(phase: PhaseLayer, cnn: Cnn, snr_db: f64) -> Result<Self> {
        cnn.validate()?;
        if phase.n_v() != cnn.in_width || phase.rows() != cnn.out_width {
            return Err(Error::Dimension(format!(
                "phase book is {}x{} but the CNN expects {}x{}",
                phase.rows(),
                phase.n_v(),
                cnn.out_width,
                cnn.in_width
            )));
        }
        Ok(Self { phase, cnn, snr_db })
    }

    pub fn dims(&self) -> SystemDims {
        SystemDims {
            m: self.cnn.height,
            l: self.cnn.out_width - 1,
            n_v: self.cnn.in_width,
        }
    }

    /// Inference on observations formed with the raw `V_NN` (not the exported book).
    pub fn estimate_batch(&self, ys: &[CMatrix]) -> Result<Vec<CMatrix>> {
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.cnn.forward(&observations_to_planes(ys))?;
        Ok(output_to_channels(&out, self.cnn.height))
    }

    /// Batch-mean `‖H − Ĥ‖²_F` with `Y = H V_NN + N`, and its gradient with
    /// respect to the angles and every CNN parameter.
    pub fn loss_and_gradients(
        &mut self,
        channels: &[CMatrix],
        noise: &[CMatrix],
        update_running: bool,
    ) -> Result<(f64, JointGradients)> {
        let dims = self.dims();
        if channels.is_empty() || channels.len() != noise.len() {
            return Err(Error::Dimension(format!(
                "need a nonempty batch with one noise matrix per channel, got {} and {}",
                channels.len(),
                noise.len()
            )));
        }
        for (h, n) in channels.iter().zip(noise) {
            if h.shape() != (dims.m, dims.l + 1) || n.shape() != (dims.m, dims.n_v) {
                return Err(Error::Dimension("batch entry does not match the model dimensions".into()));
            }
        }
        let v = self.phase.forward();
        let ys: Vec<CMatrix> = channels.iter().zip(noise).map(|(h, n)| h * &v + n).collect();
        let out = self.cnn.forward_train(&observations_to_planes(&ys), update_running)?;
        let est = output_to_channels(&out, dims.m);
        let scale = 1.0 / channels.len() as f64;
        let mut loss = 0.0;
        let diffs: Vec<CMatrix> = est
            .iter()
            .zip(channels)
            .map(|(e, h)| {
                let d = e - h;
                loss += d.norm_squared();
                d * C64::new(2.0 * scale, 0.0)
            })
            .collect();
        loss *= scale;
        let cnn_grads = self.cnn.backward(&channels_to_output(&diffs))?;
        // ∂L/∂V = Σ_b H_bᴴ G_b with G_b = ∂L/∂Re Y_b + j ∂L/∂Im Y_b.
        let g_y = planes_to_observations(&cnn_grads.input, dims.m, dims.n_v);
        let mut g_v = CMatrix::zeros(dims.l + 1, dims.n_v);
        for (h, g) in channels.iter().zip(&g_y) {
            g_v += h.ad_mul(g);
        }
        let phi = self.phase.backward(&g_v.map(|z| z.re), &g_v.map(|z| z.im))?;
        Ok((loss, JointGradients { phi, cnn: cnn_grads }))
    }

    /// One joint optimizer step over Φ and all CNN parameters.
    pub fn apply_gradients(&mut self, opt: &mut Adam, grads: &JointGradients) {
        let mut step = opt.begin_step();
        step.update(self.phase.phi.as_mut_slice(), grads.phi.as_slice());
        let tensors = grads.cnn.tensors();
        let mut i = 0;
        self.cnn.visit_params_mut(|p| {
            step.update(p, tensors[i]);
            i += 1;
        });
    }

    /// Phase book usable by any estimator.
    pub fn export_phases(&self) -> PhaseMatrix {
        self.phase.export_phases()
    }
}

/// Estimator wrapper; only valid with the model's own exported phase book.
impl ChannelEstimator for PhaseCnnModel {
    fn name(&self) -> &'static str {
        "cnn"
    }

    fn prepare(&self, v: &PhaseMatrix, _sigma2: f64) -> Result<Box<dyn PreparedEstimator>> {
        Ok(Box::new(self.prepare_cnn(v)?))
    }
}

impl PhaseCnnModel {
    /// Batched counterpart of [`ChannelEstimator::prepare`]. The noise level is
    /// fixed by training, so only the phase book is checked.
    pub fn prepare_cnn(&self, v: &PhaseMatrix) -> Result<PreparedCnn> {
        let exported = self.export_phases();
        if v.matrix().shape() != exported.matrix().shape() {
            return Err(Error::Dimension(format!(
                "phase book is {:?} but the CNN was trained for {:?}",
                v.matrix().shape(),
                exported.matrix().shape()
            )));
        }
        if max_abs_diff(v.matrix().as_slice(), exported.matrix().as_slice()) > 1e-12 {
            return Err(Error::Parameter(
                "the CNN estimator only works with the phase book it was trained with".into(),
            ));
        }
        // Exported columns were rotated by conj(V_NN[0, n]); undo that on Y.
        let raw = self.phase.forward();
        let rotation = (0..raw.ncols()).map(|n| raw[(0, n)]).collect();
        Ok(PreparedCnn {
            model: self.clone(),
            rotation,
        })
    }
}

pub struct PreparedCnn {
    model: PhaseCnnModel,
    rotation: Vec<C64>,
}

impl PreparedCnn {
    /// Estimate a whole batch of vectorized observations in one pass.
    pub fn estimate_many(&self, ys: &[CVector]) -> Result<Vec<CVector>> {
        let dims = self.model.dims();
        let mats = ys
            .iter()
            .map(|y| {
                let mut m = unvec(y, dims.m, dims.n_v)?;
                for (n, r) in self.rotation.iter().enumerate() {
                    for z in m.column_mut(n).iter_mut() {
                        *z *= *r;
                    }
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.model.estimate_batch(&mats)?.iter().map(vec_of).collect())
    }
}

impl PreparedEstimator for PreparedCnn {
    fn estimate(&self, y: &CVector) -> Result<CVector> {
        let dims = self.model.dims();
        crate::estimators::check_len(y, dims.m * dims.n_v)?;
        Ok(self.estimate_many(std::slice::from_ref(y))?.remove(0))
    }

    fn channel_cols(&self) -> usize {
        self.model.dims().l + 1
    }
}
