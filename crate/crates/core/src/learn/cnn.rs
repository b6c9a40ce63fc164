//! Small 2-D CNN operating on `[Re Y; Im Y]` planes of size `M x N_v`.
//!
//! Activations for a batch are stored as `(channels, B·H·W)` column-major
//! matrices, so each spatial position owns a contiguous run of channels and
//! 3x3 convolutions become one GEMM over an im2col patch matrix. Convolutions
//! are stride 1 with zero "same" padding. A final resizing stage maps each
//! antenna row of width `N_v` (raw input planes concatenated with the last
//! feature map) to `2 (L+1)` outputs: the real and imaginary parts of one row
//! of `Ĥ`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

pub type Mat = DMatrix<f64>;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Silu,
    Elu,
}

impl Activation {
    /// Choices available to the random hyper-parameter search.
    pub const SEARCHABLE: [Activation; 5] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Silu,
        Activation::Elu,
    ];

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Silu => 4,
            Activation::Elu => 5,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            4 => Activation::Silu,
            5 => Activation::Elu,
            _ => return None,
        })
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Relu | Activation::Elu | Activation::Silu => 2.0,
            _ => 1.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch x 9·in_ch`; column `(ky·3 + kx)·in_ch + i`.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, activation: Activation, batch_norm: bool) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: Mat::zeros(out_ch, 9 * in_ch),
            bias: vec![0.0; out_ch],
            activation,
            batch_norm: batch_norm.then(|| BatchNorm::new(out_ch)),
        }
    }

    pub fn random<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        activation: Activation,
        batch_norm: bool,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch, activation, batch_norm);
        let std = (activation.init_gain() / (9 * in_ch) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.sample::<f64, _>(StandardNormal) * std;
        }
        layer
    }

    /// Kernel tap `K[o, i, ky, kx]`.
    pub fn kernel(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[(o, (ky * 3 + kx) * self.in_ch + i)]
    }

    pub fn set_kernel(&mut self, o: usize, i: usize, ky: usize, kx: usize, value: f64) {
        self.weight[(o, (ky * 3 + kx) * self.in_ch + i)] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResizeLayer {
    pub in_ch: usize,
    pub in_width: usize,
    pub out_width: usize,
    /// `2·out_width x in_ch·in_width`; row `2 w' + part`, column `w·in_ch + c`.
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl ResizeLayer {
    pub fn zeros(in_ch: usize, in_width: usize, out_width: usize) -> Self {
        Self {
            in_ch,
            in_width,
            out_width,
            weight: Mat::zeros(2 * out_width, in_ch * in_width),
            bias: vec![0.0; 2 * out_width],
        }
    }

    pub fn random<R: Rng + ?Sized>(in_ch: usize, in_width: usize, out_width: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_ch, in_width, out_width);
        let std = (1.0 / (in_ch * in_width) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            *w = rng.sample::<f64, _>(StandardNormal) * std;
        }
        layer
    }

    /// Weight from input channel `c` at width `w` to output `part` (0 = Re, 1 = Im) at width `w_out`.
    pub fn weight_at(&self, part: usize, c: usize, w_out: usize, w: usize) -> f64 {
        self.weight[(2 * w_out + part, w * self.in_ch + c)]
    }

    pub fn set_weight(&mut self, part: usize, c: usize, w_out: usize, w: usize, value: f64) {
        self.weight[(2 * w_out + part, w * self.in_ch + c)] = value;
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    patches: Mat,
    pre_activation: Mat,
    output: Mat,
    xhat: Option<Mat>,
    inv_std: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
    /// Resize input `(in_ch·W, B·H)`.
    resize_input: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnGradients {
    pub layers: Vec<LayerGradients>,
    pub resize_weight: Mat,
    pub resize_bias: Vec<f64>,
    /// Gradient with respect to the input planes, `(2, B·H·W)`.
    pub input: Mat,
}

impl CnnGradients {
    /// Parameter gradients in [`Cnn::visit_params_mut`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g);
                out.push(b);
            }
        }
        out.push(self.resize_weight.as_slice());
        out.push(&self.resize_bias);
        out
    }
}

/// Convolutional estimator with its training-time cache.
#[derive(Debug, Clone)]
pub struct Cnn {
    /// `M`.
    pub height: usize,
    /// `N_v`.
    pub in_width: usize,
    /// `L + 1`.
    pub out_width: usize,
    pub layers: Vec<ConvLayer>,
    pub resize: ResizeLayer,
    cache: Option<ForwardCache>,
}

impl PartialEq for Cnn {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.in_width == other.in_width
            && self.out_width == other.out_width
            && self.layers == other.layers
            && self.resize == other.resize
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    /// Feature maps per convolution layer.
    pub kernels: usize,
    /// Number of 3x3 convolution layers.
    pub layers: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Cnn {
    pub fn from_parts(
        height: usize,
        in_width: usize,
        out_width: usize,
        layers: Vec<ConvLayer>,
        resize: ResizeLayer,
    ) -> Result<Self> {
        let cnn = Self {
            height,
            in_width,
            out_width,
            layers,
            resize,
            cache: None,
        };
        cnn.validate()?;
        Ok(cnn)
    }

    pub fn random<R: Rng + ?Sized>(
        height: usize,
        in_width: usize,
        out_width: usize,
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.layers > 0 && arch.kernels == 0 {
            return Err(Error::Parameter("convolution layers need at least one kernel".into()));
        }
        let mut layers = Vec::with_capacity(arch.layers);
        let mut ch = 2;
        for _ in 0..arch.layers {
            layers.push(ConvLayer::random(ch, arch.kernels, arch.activation, arch.batch_norm, rng));
            ch = arch.kernels;
        }
        let last = if arch.layers == 0 { 0 } else { arch.kernels };
        let resize = ResizeLayer::random(2 + last, in_width, out_width, rng);
        Self::from_parts(height, in_width, out_width, layers, resize)
    }

    /// Check that layer shapes chain together.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.in_width == 0 || self.out_width == 0 {
            return Err(Error::State("CNN spatial dimensions are not set".into()));
        }
        let mut ch = 2;
        for (i, l) in self.layers.iter().enumerate() {
            let bn_ok = l.batch_norm.as_ref().is_none_or(|bn| {
                [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                    .iter()
                    .all(|v| v.len() == l.out_ch)
            });
            if l.in_ch != ch
                || l.out_ch == 0
                || l.weight.shape() != (l.out_ch, 9 * l.in_ch)
                || l.bias.len() != l.out_ch
                || !bn_ok
            {
                return Err(Error::State(format!("convolution layer {i} is not initialized consistently")));
            }
            ch = l.out_ch;
        }
        let expect_in = 2 + if self.layers.is_empty() { 0 } else { ch };
        let r = &self.resize;
        if r.in_ch != expect_in
            || r.in_width != self.in_width
            || r.out_width != self.out_width
            || r.weight.shape() != (2 * self.out_width, expect_in * self.in_width)
            || r.bias.len() != 2 * self.out_width
        {
            return Err(Error::State("resizing stage does not match the convolution stack".into()));
        }
        Ok(())
    }

    /// Visit trainable tensors: per layer weight, bias, [gamma, beta]; then resize weight, bias.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(l.weight.as_mut_slice());
            f(&mut l.bias);
            if let Some(bn) = &mut l.batch_norm {
                f(&mut bn.gamma);
                f(&mut bn.beta);
            }
        }
        f(self.resize.weight.as_mut_slice());
        f(&mut self.resize.bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.clone().visit_params_mut(|p| n += p.len());
        n
    }

    fn check_input(&self, x0: &Mat) -> Result<usize> {
        self.validate()?;
        let per = self.height * self.in_width;
        if x0.nrows() != 2 || x0.ncols() == 0 || !x0.ncols().is_multiple_of(per) {
            return Err(Error::Dimension(format!(
                "CNN input must be 2 x (B·{}·{}), got {:?}",
                self.height,
                self.in_width,
                x0.shape()
            )));
        }
        Ok(x0.ncols() / per)
    }

    /// Inference pass; batch-norm uses the running statistics.
    pub fn forward(&self, x0: &Mat) -> Result<Mat> {
        let batch = self.check_input(x0)?;
        let (out, _) = self.run(x0, batch, None)?;
        Ok(out)
    }

    /// Training pass with batch statistics. Caches what [`Cnn::backward`] needs.
    pub fn forward_train(&mut self, x0: &Mat, update_running: bool) -> Result<Mat> {
        let batch = self.check_input(x0)?;
        let mut running = Vec::new();
        let (out, cache) = self.run(x0, batch, Some(&mut running))?;
        if update_running {
            for (l, stats) in self.layers.iter_mut().zip(running) {
                if let (Some(bn), Some((mean, var))) = (&mut l.batch_norm, stats) {
                    for c in 0..l.out_ch {
                        bn.running_mean[c] = (1.0 - BN_MOMENTUM) * bn.running_mean[c] + BN_MOMENTUM * mean[c];
                        bn.running_var[c] = (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * var[c];
                    }
                }
            }
        }
        self.cache = cache;
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x0: &Mat,
        batch: usize,
        mut train: Option<&mut Vec<Option<(Vec<f64>, Vec<f64>)>>>,
    ) -> Result<(Mat, Option<ForwardCache>)> {
        let (h, w) = (self.height, self.in_width);
        let positions = batch * h * w;
        let mut caches = Vec::new();
        let mut x = x0.clone();
        for layer in &self.layers {
            let patches = im2col(&x, layer.in_ch, batch, h, w);
            let mut z = &layer.weight * &patches;
            for (c, b) in layer.bias.iter().enumerate() {
                z.row_mut(c).add_scalar_mut(*b);
            }
            let mut xhat = None;
            let mut inv_std = None;
            let mut stats = None;
            if let Some(bn) = &layer.batch_norm {
                let n = positions as f64;
                let (mean, var) = if train.is_some() {
                    let mean: Vec<f64> = (0..layer.out_ch).map(|c| z.row(c).sum() / n).collect();
                    let var: Vec<f64> = (0..layer.out_ch)
                        .map(|c| z.row(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n)
                        .collect();
                    let unbiased = if positions > 1 { n / (n - 1.0) } else { 1.0 };
                    stats = Some((mean.clone(), var.iter().map(|v| v * unbiased).collect()));
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let is: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xh = z.clone();
                for p in 0..positions {
                    for c in 0..layer.out_ch {
                        let v = (xh[(c, p)] - mean[c]) * is[c];
                        xh[(c, p)] = v;
                        z[(c, p)] = bn.gamma[c] * v + bn.beta[c];
                    }
                }
                xhat = Some(xh);
                inv_std = Some(is);
            }
            let act = layer.activation;
            let out = z.map(|v| act.apply(v));
            if let Some(t) = train.as_deref_mut() {
                t.push(stats);
                caches.push(LayerCache {
                    patches,
                    pre_activation: z,
                    output: out.clone(),
                    xhat,
                    inv_std,
                });
            }
            x = out;
        }
        let resize_input = self.resize_input(x0, &x, batch);
        let mut out = &self.resize.weight * &resize_input;
        for (r, b) in self.resize.bias.iter().enumerate() {
            out.row_mut(r).add_scalar_mut(*b);
        }
        let cache = train.map(|_| ForwardCache {
            batch,
            layers: caches,
            resize_input,
        });
        Ok((out, cache))
    }

    /// `[x0; features]` per position, reshaped to `(in_ch·W, B·H)`.
    fn resize_input(&self, x0: &Mat, features: &Mat, batch: usize) -> Mat {
        let in_ch = self.resize.in_ch;
        let positions = batch * self.height * self.in_width;
        let mut data = Vec::with_capacity(in_ch * positions);
        let f_ch = in_ch - 2;
        let (xs, fs) = (x0.as_slice(), features.as_slice());
        for p in 0..positions {
            data.extend_from_slice(&xs[2 * p..2 * p + 2]);
            if f_ch > 0 {
                data.extend_from_slice(&fs[f_ch * p..f_ch * (p + 1)]);
            }
        }
        Mat::from_vec(in_ch * self.in_width, batch * self.height, data)
    }

    /// Backpropagate `∂L/∂out` through the cached training pass.
    pub fn backward(&mut self, d_out: &Mat) -> Result<CnnGradients> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached training forward pass".into()))?;
        let batch = cache.batch;
        if d_out.shape() != (2 * self.out_width, batch * self.height) {
            return Err(Error::Dimension(format!(
                "output gradient has shape {:?}, expected {:?}",
                d_out.shape(),
                (2 * self.out_width, batch * self.height)
            )));
        }
        let (h, w) = (self.height, self.in_width);
        let positions = batch * h * w;
        let resize_weight = d_out * cache.resize_input.transpose();
        let resize_bias: Vec<f64> = (0..d_out.nrows()).map(|r| d_out.row(r).sum()).collect();
        let d_resize_in = self.resize.weight.tr_mul(d_out);
        // Back to (in_ch, positions) and split off the raw input channels.
        let in_ch = self.resize.in_ch;
        let flat = d_resize_in.as_slice();
        let f_ch = in_ch - 2;
        let mut d_input = Mat::zeros(2, positions);
        let mut d_act = Mat::zeros(f_ch, positions);
        for p in 0..positions {
            let src = &flat[in_ch * p..in_ch * (p + 1)];
            d_input.as_mut_slice()[2 * p..2 * p + 2].copy_from_slice(&src[..2]);
            if f_ch > 0 {
                d_act.as_mut_slice()[f_ch * p..f_ch * (p + 1)].copy_from_slice(&src[2..]);
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        for (li, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let act = layer.activation;
            let mut dz = d_act.zip_zip_map(&lc.pre_activation, &lc.output, |g, x, y| g * act.derivative(x, y));
            let mut gamma = None;
            let mut beta = None;
            if let (Some(bn), Some(xhat), Some(inv_std)) = (&layer.batch_norm, &lc.xhat, &lc.inv_std) {
                let n = positions as f64;
                let mut dg = vec![0.0; layer.out_ch];
                let mut db = vec![0.0; layer.out_ch];
                for p in 0..positions {
                    for c in 0..layer.out_ch {
                        dg[c] += dz[(c, p)] * xhat[(c, p)];
                        db[c] += dz[(c, p)];
                    }
                }
                // dxhat = dy * gamma; dz = inv_std / n * (n dxhat - Σ dxhat - xhat Σ dxhat xhat)
                for c in 0..layer.out_ch {
                    let sum_dxhat = db[c] * bn.gamma[c];
                    let sum_dxhat_xhat = dg[c] * bn.gamma[c];
                    for p in 0..positions {
                        let dxhat = dz[(c, p)] * bn.gamma[c];
                        dz[(c, p)] = inv_std[c] / n * (n * dxhat - sum_dxhat - xhat[(c, p)] * sum_dxhat_xhat);
                    }
                }
                gamma = Some(dg);
                beta = Some(db);
            }
            let weight = &dz * lc.patches.transpose();
            let bias = (0..layer.out_ch).map(|c| dz.row(c).sum()).collect();
            let d_patches = layer.weight.tr_mul(&dz);
            let d_prev = col2im(&d_patches, layer.in_ch, batch, h, w);
            grads.push(LayerGradients {
                weight,
                bias,
                gamma,
                beta,
            });
            if li == 0 {
                d_input += d_prev;
                d_act = Mat::zeros(0, positions);
            } else {
                d_act = d_prev;
            }
        }
        grads.reverse();
        Ok(CnnGradients {
            layers: grads,
            resize_weight,
            resize_bias,
            input: d_input,
        })
    }
}

fn im2col(x: &Mat, ch: usize, batch: usize, h: usize, w: usize) -> Mat {
    let rows = 9 * ch;
    let positions = batch * h * w;
    let mut out = Mat::zeros(rows, positions);
    let xs = x.as_slice();
    let os = out.as_mut_slice();
    for b in 0..batch {
        for y in 0..h {
            for xx in 0..w {
                let p = (b * h + y) * w + xx;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let q = (b * h + sy as usize) * w + sx as usize;
                        let dst = p * rows + (ky * 3 + kx) * ch;
                        os[dst..dst + ch].copy_from_slice(&xs[q * ch..(q + 1) * ch]);
                    }
                }
            }
        }
    }
    out
}

fn col2im(d_patches: &Mat, ch: usize, batch: usize, h: usize, w: usize) -> Mat {
    let rows = 9 * ch;
    let positions = batch * h * w;
    let mut out = Mat::zeros(ch, positions);
    let ds = d_patches.as_slice();
    let os = out.as_mut_slice();
    for b in 0..batch {
        for y in 0..h {
            for xx in 0..w {
                let p = (b * h + y) * w + xx;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let q = (b * h + sy as usize) * w + sx as usize;
                        let src = p * rows + (ky * 3 + kx) * ch;
                        for c in 0..ch {
                            os[q * ch + c] += ds[src + c];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Stack observations `Y_b` (`M x N_v`) into `(2, B·M·N_v)` input planes.
pub fn observations_to_planes(ys: &[CMatrix]) -> Mat {
    let (h, w) = ys.first().map_or((0, 0), |y| y.shape());
    let mut data = Vec::with_capacity(2 * ys.len() * h * w);
    for y in ys {
        for m in 0..h {
            for n in 0..w {
                let z = y[(m, n)];
                data.push(z.re);
                data.push(z.im);
            }
        }
    }
    Mat::from_vec(2, ys.len() * h * w, data)
}

/// Split an input-plane gradient back into per-sample `∂L/∂Re Y + j ∂L/∂Im Y`.
pub fn planes_to_observations(planes: &Mat, h: usize, w: usize) -> Vec<CMatrix> {
    let per = h * w;
    let batch = planes.ncols() / per;
    (0..batch)
        .map(|b| {
            CMatrix::from_fn(h, w, |m, n| {
                let p = b * per + m * w + n;
                C64::new(planes[(0, p)], planes[(1, p)])
            })
        })
        .collect()
}

/// Decode the resize output `(2 (L+1), B·M)` into complex `M x (L+1)` estimates.
pub fn output_to_channels(out: &Mat, h: usize) -> Vec<CMatrix> {
    let cols = out.nrows() / 2;
    let batch = out.ncols() / h;
    (0..batch)
        .map(|b| CMatrix::from_fn(h, cols, |m, c| C64::new(out[(2 * c, b * h + m)], out[(2 * c + 1, b * h + m)])))
        .collect()
}

/// Inverse of [`output_to_channels`] for gradients.
pub fn channels_to_output(hs: &[CMatrix]) -> Mat {
    let (h, cols) = hs.first().map_or((0, 0), |x| x.shape());
    Mat::from_fn(2 * cols, hs.len() * h, |r, col| {
        let z = hs[col / h][(col % h, r / 2)];
        if r % 2 == 0 {
            z.re
        } else {
            z.im
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    /// Direct 3x3 same-padding convolution on `[B][C][H][W]` arrays.
    fn naive_conv(layer: &ConvLayer, input: &[Vec<Vec<Vec<f64>>>]) -> Vec<Vec<Vec<Vec<f64>>>> {
        let h = input[0][0].len();
        let w = input[0][0][0].len();
        input
            .iter()
            .map(|sample| {
                (0..layer.out_ch)
                    .map(|o| {
                        (0..h)
                            .map(|y| {
                                (0..w)
                                    .map(|x| {
                                        let mut acc = layer.bias[o];
                                        for i in 0..layer.in_ch {
                                            for ky in 0..3 {
                                                for kx in 0..3 {
                                                    let sy = y as isize + ky as isize - 1;
                                                    let sx = x as isize + kx as isize - 1;
                                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                                        acc += layer.kernel(o, i, ky, kx)
                                                            * sample[i][sy as usize][sx as usize];
                                                    }
                                                }
                                            }
                                        }
                                        layer.activation.apply(acc)
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn naive_forward(cnn: &Cnn, ys: &[CMatrix]) -> Vec<CMatrix> {
        let (h, w) = ys[0].shape();
        let input: Vec<Vec<Vec<Vec<f64>>>> = ys
            .iter()
            .map(|y| {
                vec![
                    (0..h).map(|m| (0..w).map(|n| y[(m, n)].re).collect()).collect(),
                    (0..h).map(|m| (0..w).map(|n| y[(m, n)].im).collect()).collect(),
                ]
            })
            .collect();
        let mut x = input.clone();
        for layer in &cnn.layers {
            x = naive_conv(layer, &x);
        }
        ys.iter()
            .enumerate()
            .map(|(b, _)| {
                let mut feats = input[b].clone();
                if !cnn.layers.is_empty() {
                    feats.extend(x[b].iter().cloned());
                }
                CMatrix::from_fn(h, cnn.out_width, |m, wo| {
                    let mut part = [cnn.resize.bias[2 * wo], cnn.resize.bias[2 * wo + 1]];
                    for (p, acc) in part.iter_mut().enumerate() {
                        for (c, f) in feats.iter().enumerate() {
                            for wi in 0..w {
                                *acc += cnn.resize.weight_at(p, c, wo, wi) * f[m][wi];
                            }
                        }
                    }
                    C64::new(part[0], part[1])
                })
            })
            .collect()
    }

    fn random_obs(b: usize, h: usize, w: usize, seed: u64) -> Vec<CMatrix> {
        let mut rng = rng_from_seed(seed);
        (0..b)
            .map(|_| CMatrix::from_fn(h, w, |_, _| crate::linalg::complex_normal(&mut rng, 1.0)))
            .collect()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let layers = vec![ConvLayer::zeros(2, 3, Activation::Relu, false)];
        let cnn = Cnn::from_parts(2, 3, 4, layers, ResizeLayer::zeros(5, 3, 4)).unwrap();
        let out = cnn.forward(&observations_to_planes(&random_obs(2, 2, 3, 1))).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let (h, w) = (3, 4);
        let mut conv = ConvLayer::zeros(2, 2, Activation::Identity, false);
        conv.set_kernel(0, 0, 1, 1, 1.0);
        conv.set_kernel(1, 1, 1, 1, 1.0);
        let mut resize = ResizeLayer::zeros(4, w, w);
        for x in 0..w {
            resize.set_weight(0, 2, x, x, 1.0);
            resize.set_weight(1, 3, x, x, 1.0);
        }
        let cnn = Cnn::from_parts(h, w, w, vec![conv], resize).unwrap();
        let ys = random_obs(3, h, w, 2);
        let est = output_to_channels(&cnn.forward(&observations_to_planes(&ys)).unwrap(), h);
        assert_eq!(est, ys);
    }

    #[test]
    fn matches_direct_convolution() {
        let arch = Architecture {
            kernels: 5,
            layers: 3,
            activation: Activation::Tanh,
            batch_norm: false,
        };
        let cnn = Cnn::random(3, 4, 6, &arch, &mut rng_from_seed(3)).unwrap();
        let ys = random_obs(4, 3, 4, 4);
        let fast = output_to_channels(&cnn.forward(&observations_to_planes(&ys)).unwrap(), 3);
        let slow = naive_forward(&cnn, &ys);
        for (a, b) in fast.iter().zip(&slow) {
            assert!(crate::linalg::max_abs_diff(a.as_slice(), b.as_slice()) < 1e-10);
        }
    }

    #[test]
    fn plane_round_trips() {
        let ys = random_obs(3, 2, 5, 5);
        assert_eq!(planes_to_observations(&observations_to_planes(&ys), 2, 5), ys);
        let hs = random_obs(3, 2, 4, 6);
        assert_eq!(output_to_channels(&channels_to_output(&hs), 2), hs);
    }

    #[test]
    fn backward_requires_cache() {
        let arch = Architecture {
            kernels: 2,
            layers: 1,
            activation: Activation::Relu,
            batch_norm: false,
        };
        let mut cnn = Cnn::random(2, 2, 3, &arch, &mut rng_from_seed(7)).unwrap();
        assert!(matches!(cnn.backward(&Mat::zeros(6, 2)), Err(Error::State(_))));
    }

    #[test]
    fn inconsistent_model_is_a_state_error() {
        let layers = vec![ConvLayer::zeros(3, 2, Activation::Relu, false)];
        assert!(matches!(
            Cnn::from_parts(2, 2, 3, layers, ResizeLayer::zeros(4, 2, 3)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let arch = Architecture {
            kernels: 3,
            layers: 2,
            activation: Activation::Silu,
            batch_norm: true,
        };
        let mut cnn = Cnn::random(2, 3, 4, &arch, &mut rng_from_seed(8)).unwrap();
        let x = observations_to_planes(&random_obs(3, 2, 3, 9));
        let up = channels_to_output(&random_obs(3, 2, 4, 10));
        cnn.forward_train(&x, false).unwrap();
        let g1 = cnn.backward(&up).unwrap();
        cnn.forward_train(&x, false).unwrap();
        let g2 = cnn.backward(&(&up * 2.0)).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
        cnn.forward_train(&x, false).unwrap();
        let g0 = cnn.backward(&Mat::zeros(up.nrows(), up.ncols())).unwrap();
        assert!(g0.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }
}
