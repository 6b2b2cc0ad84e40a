use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureTensor, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::kalman::Reader;

pub const CONV_KERNELS: [usize; 4] = [7, 5, 3, 3];
pub const CONV_STRIDES: [usize; 4] = [1, 3, 3, 3];
pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_CONV_CHANNELS: usize = 8;

const CHECKPOINT_MAGIC: &[u8; 4] = b"DNC1";
const MAX_HEADER: usize = 1 << 16;
const MAX_BINS: usize = 1024;
const MAX_FRAMES: usize = 4096;
const MAX_CHANNELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub num_bins: usize,
    /// Time length `L` of the input tensor.
    pub frames: usize,
    /// Feature maps per convolution layer.
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    in_w: usize,
    out_w: usize,
    pad: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseLayer {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    conv: [ConvLayer; 4],
    fc: [DenseLayer; 2],
    total: usize,
}

impl Architecture {
    pub fn new(num_bins: usize, frames: usize) -> Self {
        Self {
            num_bins,
            frames,
            channels: DEFAULT_CONV_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BINS).contains(&self.num_bins)
            || !(1..=MAX_FRAMES).contains(&self.frames)
            || !(1..=MAX_CHANNELS).contains(&self.channels)
        {
            return Err(Error::config(format!("unsupported detector architecture {self:?}")));
        }
        Ok(())
    }

    /// Time widths of the input and of each convolution output ('same' padding).
    pub fn widths(&self) -> [usize; 5] {
        let mut w = [self.frames; 5];
        for i in 0..4 {
            w[i + 1] = w[i].div_ceil(CONV_STRIDES[i]);
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    fn layout(&self) -> Layout {
        let widths = self.widths();
        let mut off = 0;
        let conv = std::array::from_fn(|i| {
            let in_ch = if i == 0 { FEATURE_CHANNELS } else { self.channels };
            let (kernel, stride) = (CONV_KERNELS[i], CONV_STRIDES[i]);
            let (in_w, out_w) = (widths[i], widths[i + 1]);
            let pad = ((out_w - 1) * stride + kernel).saturating_sub(in_w) / 2;
            let w = off;
            off += self.channels * in_ch * kernel;
            let b = off;
            off += self.channels;
            ConvLayer {
                in_ch,
                out_ch: self.channels,
                kernel,
                stride,
                in_w,
                out_w,
                pad,
                w,
                b,
            }
        });
        let flat = self.channels * self.num_bins * widths[4];
        let sizes = [(flat, 2 * self.num_bins), (2 * self.num_bins, self.num_bins)];
        let fc = std::array::from_fn(|i| {
            let (inputs, outputs) = sizes[i];
            let w = off;
            off += inputs * outputs;
            let b = off;
            off += outputs;
            DenseLayer { inputs, outputs, w, b }
        });
        Layout { conv, fc, total: off }
    }

    /// Checked parameter count, for untrusted headers.
    fn checked_parameter_count(&self) -> Option<usize> {
        let w4 = self.widths()[4];
        let mut total = 0usize;
        for i in 0..4 {
            let in_ch = if i == 0 { FEATURE_CHANNELS } else { self.channels };
            total = total.checked_add(self.channels.checked_mul(in_ch)?.checked_mul(CONV_KERNELS[i])? + self.channels)?;
        }
        let flat = self.channels.checked_mul(self.num_bins)?.checked_mul(w4)?;
        let two = 2 * self.num_bins;
        total = total.checked_add(flat.checked_mul(two)?.checked_add(two)?)?;
        total.checked_add(two * self.num_bins + self.num_bins)
    }
}

/// Inverted-dropout multipliers for the inputs of the two dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub fc1: Vec<f64>,
    pub fc2: Vec<f64>,
}

/// Each entry is 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = (1.0 - p).recip();
    (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(arch: &Architecture, p: f64, rng: &mut R) -> Self {
        let l = arch.layout();
        Self {
            fc1: dropout_mask(l.fc[0].inputs, p, rng),
            fc2: dropout_mask(l.fc[1].inputs, p, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct Trace {
    /// Input of each convolution layer, then the final activation.
    acts: Vec<Vec<f64>>,
    /// Pre-activation outputs of each convolution layer.
    conv_z: Vec<Vec<f64>>,
    fc1_in: Vec<f64>,
    hidden_z: Vec<f64>,
    fc2_in: Vec<f64>,
    logits: Vec<f64>,
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
pub fn bce_with_logits(logits: &[f64], labels: &[bool]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - if y { z } else { 0.0 } + (-z.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

fn conv_forward(c: &ConvLayer, bins: usize, p: &[f64], inp: &[f64], out: &mut [f64]) {
    for o in 0..c.out_ch {
        let bias = p[c.b + o];
        for r in 0..bins {
            for t in 0..c.out_w {
                let start = (t * c.stride) as isize - c.pad as isize;
                let mut z = bias;
                for i in 0..c.in_ch {
                    let row = &inp[(i * bins + r) * c.in_w..][..c.in_w];
                    let wrow = &p[c.w + (o * c.in_ch + i) * c.kernel..][..c.kernel];
                    for (j, wv) in wrow.iter().enumerate() {
                        let s = start + j as isize;
                        if s >= 0 && (s as usize) < c.in_w {
                            z += wv * row[s as usize];
                        }
                    }
                }
                out[(o * bins + r) * c.out_w + t] = z;
            }
        }
    }
}

fn conv_backward(c: &ConvLayer, bins: usize, p: &[f64], inp: &[f64], dz: &[f64], grad: &mut [f64], din: &mut [f64]) {
    for o in 0..c.out_ch {
        for r in 0..bins {
            for t in 0..c.out_w {
                let g = dz[(o * bins + r) * c.out_w + t];
                if g == 0.0 {
                    continue;
                }
                grad[c.b + o] += g;
                let start = (t * c.stride) as isize - c.pad as isize;
                for i in 0..c.in_ch {
                    let base = (i * bins + r) * c.in_w;
                    let woff = c.w + (o * c.in_ch + i) * c.kernel;
                    for j in 0..c.kernel {
                        let s = start + j as isize;
                        if s >= 0 && (s as usize) < c.in_w {
                            let s = s as usize;
                            grad[woff + j] += g * inp[base + s];
                            din[base + s] += g * p[woff + j];
                        }
                    }
                }
            }
        }
    }
}

fn dense_forward(d: &DenseLayer, p: &[f64], inp: &[f64]) -> Vec<f64> {
    (0..d.outputs)
        .map(|o| {
            let w = &p[d.w + o * d.inputs..][..d.inputs];
            p[d.b + o] + w.iter().zip(inp).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn dense_backward(d: &DenseLayer, p: &[f64], inp: &[f64], dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut din = vec![0.0; d.inputs];
    for (o, &g) in dz.iter().enumerate() {
        grad[d.b + o] += g;
        let w = &p[d.w + o * d.inputs..][..d.inputs];
        let gw = &mut grad[d.w + o * d.inputs..][..d.inputs];
        for i in 0..d.inputs {
            gw[i] += g * inp[i];
            din[i] += g * w[i];
        }
    }
    din
}

/// Convolutional detector predicting one dependency-map row per query.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNetwork {
    arch: Architecture,
    params: Vec<f64>,
}

impl DetectorNetwork {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let l = arch.layout();
        for c in &l.conv {
            let bound = (6.0 / (c.in_ch * c.kernel) as f64).sqrt();
            for v in &mut net.params[c.w..c.b] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        for d in &l.fc {
            let bound = (6.0 / d.inputs as f64).sqrt();
            for v in &mut net.params[d.w..d.b] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: vec![0.0; arch.parameter_count()],
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named parameter ranges in storage order.
    pub fn layer_ranges(&self) -> Vec<(String, Range<usize>)> {
        let l = self.arch.layout();
        let mut out = Vec::new();
        for (i, c) in l.conv.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), c.w..c.b));
            out.push((format!("conv{}.bias", i + 1), c.b..c.b + c.out_ch));
        }
        for (i, d) in l.fc.iter().enumerate() {
            out.push((format!("fc{}.weight", i + 1), d.w..d.b));
            out.push((format!("fc{}.bias", i + 1), d.b..d.b + d.outputs));
        }
        out
    }

    fn check_input(&self, t: &FeatureTensor) -> Result<()> {
        if t.num_bins() != self.arch.num_bins || t.frames() != self.arch.frames {
            return Err(Error::shape(format!(
                "feature tensor {:?} does not fit network for {} bins x {} frames",
                t.shape(),
                self.arch.num_bins,
                self.arch.frames
            )));
        }
        Ok(())
    }

    fn trace(&self, input: &[f64], masks: Option<&DropoutMasks>) -> Trace {
        let l = self.arch.layout();
        let bins = self.arch.num_bins;
        let p = &self.params;
        let mut acts = vec![input.to_vec()];
        let mut conv_z = Vec::with_capacity(4);
        for c in &l.conv {
            let mut z = vec![0.0; c.out_ch * bins * c.out_w];
            conv_forward(c, bins, p, acts.last().unwrap(), &mut z);
            acts.push(z.iter().map(|&v| leaky(v)).collect());
            conv_z.push(z);
        }
        let mut fc1_in = acts.last().unwrap().clone();
        if let Some(m) = masks {
            fc1_in.iter_mut().zip(&m.fc1).for_each(|(v, s)| *v *= s);
        }
        let hidden_z = dense_forward(&l.fc[0], p, &fc1_in);
        let mut fc2_in: Vec<f64> = hidden_z.iter().map(|&v| leaky(v)).collect();
        if let Some(m) = masks {
            fc2_in.iter_mut().zip(&m.fc2).for_each(|(v, s)| *v *= s);
        }
        let logits = dense_forward(&l.fc[1], p, &fc2_in);
        Trace {
            acts,
            conv_z,
            fc1_in,
            hidden_z,
            fc2_in,
            logits,
        }
    }

    fn backward(&self, tr: &Trace, masks: Option<&DropoutMasks>, dlogits: &[f64], grad: &mut [f64]) {
        let l = self.arch.layout();
        let bins = self.arch.num_bins;
        let p = &self.params;
        let mut d = dense_backward(&l.fc[1], p, &tr.fc2_in, dlogits, grad);
        if let Some(m) = masks {
            d.iter_mut().zip(&m.fc2).for_each(|(v, s)| *v *= s);
        }
        d.iter_mut().zip(&tr.hidden_z).for_each(|(v, &z)| *v *= leaky_grad(z));
        let mut d = dense_backward(&l.fc[0], p, &tr.fc1_in, &d, grad);
        if let Some(m) = masks {
            d.iter_mut().zip(&m.fc1).for_each(|(v, s)| *v *= s);
        }
        for (i, c) in l.conv.iter().enumerate().rev() {
            d.iter_mut().zip(&tr.conv_z[i]).for_each(|(v, &z)| *v *= leaky_grad(z));
            let mut din = vec![0.0; c.in_ch * bins * c.in_w];
            conv_backward(c, bins, p, &tr.acts[i], &d, grad, &mut din);
            d = din;
        }
    }

    pub fn logits(&self, t: &FeatureTensor) -> Result<Vec<f64>> {
        self.check_input(t)?;
        Ok(self.trace(t.data(), None).logits)
    }

    /// Inference: per-input-bin dependency probabilities, no dropout.
    pub fn forward(&self, t: &FeatureTensor) -> Result<Vec<f64>> {
        Ok(self.logits(t)?.into_iter().map(sigmoid).collect())
    }

    /// Mean BCE and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        t: &FeatureTensor,
        labels: &[bool],
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(t)?;
        if labels.len() != self.arch.num_bins {
            return Err(Error::shape("label row length differs from network output"));
        }
        let tr = self.trace(t.data(), masks);
        let n = labels.len() as f64;
        let dlogits: Vec<f64> = tr
            .logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (sigmoid(z) - if y { 1.0 } else { 0.0 }) / n)
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&tr, masks, &dlogits, &mut grad);
        Ok((bce_with_logits(&tr.logits, labels), grad))
    }

    pub fn loss(&self, t: &FeatureTensor, labels: &[bool], masks: Option<&DropoutMasks>) -> Result<f64> {
        self.check_input(t)?;
        Ok(bce_with_logits(&self.trace(t.data(), masks).logits, labels))
    }

    /// `DNC1`, u32 header length, JSON header, then the parameters as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&CheckpointHeader {
            architecture: self.arch,
            parameters: self.params.len(),
            leaky_slope: LEAKY_SLOPE,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("bad detector checkpoint magic"));
        }
        let len = r.u32()? as usize;
        if len > MAX_HEADER {
            return Err(Error::format("detector checkpoint header too long"));
        }
        let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
        let arch = header.architecture;
        arch.validate().map_err(|e| Error::format(e.to_string()))?;
        if header.leaky_slope != LEAKY_SLOPE {
            return Err(Error::format("unsupported activation slope"));
        }
        let count = arch
            .checked_parameter_count()
            .filter(|&c| c == header.parameters)
            .ok_or_else(|| Error::format("parameter count does not match architecture"))?;
        if count.checked_mul(8) != Some(r.remaining()) {
            return Err(Error::format("detector checkpoint length mismatch"));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detector checkpoint"));
        }
        Ok(Self { arch, params })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    parameters: usize,
    leaky_slope: f64,
}
