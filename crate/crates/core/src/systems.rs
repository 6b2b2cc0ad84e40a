//! Reference systems used as ground truth: Bouc-Wen hysteresis, quadrature
//! amplitude modulation, and an exponentially decaying reverberant channel.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoucWenParams {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub mu: f64,
}

impl Default for BoucWenParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 1.0,
            zeta: 0.5,
            mu: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoucWenState {
    pub s: f64,
    pub u_prev: f64,
}

/// Forward-Euler Bouc-Wen update; returns the output displacement.
pub fn bouc_wen_step(state: &mut BoucWenState, p: &BoucWenParams, u: f64) -> f64 {
    let du = u - state.u_prev;
    state.s += p.alpha * du - p.zeta * state.s.abs() * du - p.beta * du.abs() * state.s;
    state.u_prev = u;
    p.mu * u - state.s
}

pub fn bouc_wen(u: &[f64], p: &BoucWenParams) -> Vec<f64> {
    let mut state = BoucWenState::default();
    u.iter().map(|&v| bouc_wen_step(&mut state, p, v)).collect()
}

/// `x[n] * sin(pi n / 2)`, evaluated exactly on the quadrature grid.
pub fn am_modulate(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(n, &v)| match n % 4 {
            1 => v,
            3 => -v,
            _ => 0.0,
        })
        .collect()
}

/// Exponentially decaying Gaussian noise whose energy falls by 60 dB after
/// `rt60_ms`. Length is 1.5 RT60 and the response has unit energy.
pub fn synth_reverb_ir<R: Rng + ?Sized>(rt60_ms: f64, fs: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rt60_ms > 0.0) || !rt60_ms.is_finite() || !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::config("rt60 and sample rate must be positive"));
    }
    let t60 = rt60_ms * 1e-3 * fs;
    let len = ((1.5 * t60).ceil() as usize).max(1);
    let decay = 3.0 * std::f64::consts::LN_10 / t60;
    let mut ir: Vec<f64> = (0..len)
        .map(|n| rng.sample::<f64, _>(StandardNormal) * (-decay * n as f64).exp())
        .collect();
    let energy: f64 = ir.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let scale = energy.sqrt().recip();
        ir.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(ir)
}

/// Full-length linear convolution (`x.len() + ir.len() - 1` samples).
pub fn fir_filter(x: &[f64], ir: &[f64]) -> Result<Vec<f64>> {
    if ir.is_empty() {
        return Err(Error::config("impulse response is empty"));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if ir.len().min(x.len()) <= 64 {
        return Ok(direct_convolution(x, ir));
    }
    Ok(fft_convolution(x, ir))
}

fn direct_convolution(x: &[f64], ir: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + ir.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        for (j, &hv) in ir.iter().enumerate() {
            y[i + j] += xv * hv;
        }
    }
    y
}

/// Overlap-add with blocks as long as the (shorter) filter.
fn fft_convolution(x: &[f64], ir: &[f64]) -> Vec<f64> {
    let (x, ir) = if ir.len() > x.len() { (ir, x) } else { (x, ir) };
    let block = ir.len().next_power_of_two();
    let size = 2 * block;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut h: Vec<Complex64> = ir.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    h.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut h);
    let mut y = vec![0.0; x.len() + ir.len() - 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for (b, chunk) in x.chunks(block).enumerate() {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (dst, &v) in buf.iter_mut().zip(chunk) {
            dst.re = v;
        }
        fwd.process(&mut buf);
        for (z, hv) in buf.iter_mut().zip(&h) {
            *z *= hv;
        }
        inv.process(&mut buf);
        let start = b * block;
        let valid = (chunk.len() + ir.len() - 1).min(y.len() - start);
        for (dst, z) in y[start..start + valid].iter_mut().zip(&buf) {
            *dst += z.re / size as f64;
        }
    }
    y
}

/// Gaussian noise low-passed to `cutoff` (fraction of Nyquist) by a
/// Blackman-windowed sinc, scaled to standard deviation `std`.
pub fn band_limited_noise<R: Rng + ?Sized>(len: usize, cutoff: f64, std: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::config("cutoff must be in (0, 1]"));
    }
    let taps = 255usize;
    let half = (taps / 2) as isize;
    let raw: Vec<f64> = (0..len + taps - 1).map(|_| rng.sample(StandardNormal)).collect();
    if cutoff >= 1.0 {
        let mut out = raw[..len].to_vec();
        rescale(&mut out, std);
        return Ok(out);
    }
    let kernel: Vec<f64> = (0..taps)
        .map(|i| {
            let m = i as isize - half;
            let sinc = if m == 0 {
                cutoff
            } else {
                (std::f64::consts::PI * cutoff * m as f64).sin() / (std::f64::consts::PI * m as f64)
            };
            let w = 2.0 * std::f64::consts::PI * i as f64 / (taps - 1) as f64;
            sinc * (0.42 - 0.5 * w.cos() + 0.08 * (2.0 * w).cos())
        })
        .collect();
    let filtered = fir_filter(&raw, &kernel)?;
    let mut out = filtered[taps - 1..taps - 1 + len].to_vec();
    rescale(&mut out, std);
    Ok(out)
}

fn rescale(x: &mut [f64], std: f64) {
    if x.is_empty() {
        return;
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= std / rms);
    }
}

/// Bouc-Wen followed by a synthetic reverberant channel, truncated to the excitation length.
pub fn hysteresis_pipeline<R: Rng + ?Sized>(
    x: &[f64],
    params: &BoucWenParams,
    rt60_ms: f64,
    fs: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hysteresis excitation"));
    }
    let ir = synth_reverb_ir(rt60_ms, fs, rng)?;
    let displaced = bouc_wen(x, params);
    let mut y = fir_filter(&displaced, &ir)?;
    y.truncate(x.len());
    Ok(y)
}

/// Schroeder backward-integrated energy decay in dB, normalised to 0 dB at the start.
pub fn energy_decay_curve(ir: &[f64]) -> Vec<f64> {
    let mut tail: Vec<f64> = ir.iter().rev().scan(0.0, |acc, v| {
        *acc += v * v;
        Some(*acc)
    }).collect();
    tail.reverse();
    let total = tail.first().copied().unwrap_or(0.0);
    tail.iter().map(|e| 10.0 * (e / total).log10()).collect()
}
