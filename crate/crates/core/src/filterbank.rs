//! Half-bin-shifted analysis/synthesis filterbank.
//!
//! Block `l` covers samples `l*N_h .. l*N_h + N_w`. The analysis kernel uses the
//! absolute sample index, so bin `k` sits at normalised frequency
//! `(k + 1/2) * 2*pi / N_w`. Only the `N_s = N_w/2` positive-frequency bins are
//! kept; for a real signal the remaining half is the mirrored conjugate, which
//! is what the synthesis side reconstructs.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterbankConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub num_bins: usize,
    #[serde(default)]
    pub window_kind: WindowKind,
}

impl FilterbankConfig {
    /// Builds a validated config with `num_bins = window_size / 2`.
    pub fn new(window_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            window_size,
            hop_size,
            num_bins: window_size / 2,
            window_kind: WindowKind::SqrtHann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(mut self, kind: WindowKind) -> Result<Self> {
        self.window_kind = kind;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (nw, nh) = (self.window_size, self.hop_size);
        if nw < 2 || nw % 2 != 0 {
            return Err(Error::config(format!("window size {nw} must be even and >= 2")));
        }
        if nh == 0 || nh > nw || nw % nh != 0 {
            return Err(Error::config(format!(
                "hop size {nh} must divide window size {nw}"
            )));
        }
        if self.num_bins != nw / 2 {
            return Err(Error::config(format!(
                "num_bins {} must equal window_size/2 = {}",
                self.num_bins,
                nw / 2
            )));
        }
        if self.window_kind == WindowKind::SqrtHann && nw / nh < 2 {
            return Err(Error::config(
                "sqrt-hann pair needs at least 50% overlap for constant overlap-add",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub analysis: Vec<f64>,
    pub synthesis: Vec<f64>,
}

impl WindowPair {
    /// Largest relative deviation of the overlap-added window product from its mean.
    pub fn cola_deviation(&self, hop: usize) -> f64 {
        let n = self.analysis.len();
        let sums: Vec<f64> = (0..hop)
            .map(|r| {
                (r..n)
                    .step_by(hop)
                    .map(|i| self.analysis[i] * self.synthesis[i])
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / hop as f64;
        sums.iter()
            .map(|s| ((s - mean) / mean).abs())
            .fold(0.0, f64::max)
    }
}

/// Analysis/synthesis pair whose overlap-added product is exactly one.
pub fn make_window_pair(config: &FilterbankConfig) -> Result<WindowPair> {
    config.validate()?;
    let nw = config.window_size;
    let overlap = nw as f64 / config.hop_size as f64;
    let (analysis, gain) = match config.window_kind {
        WindowKind::SqrtHann => {
            let w: Vec<f64> = (0..nw)
                .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / nw as f64).cos()).sqrt())
                .collect();
            // periodic Hann overlap-adds to overlap/2
            (w, 2.0 / overlap)
        }
        WindowKind::Rectangular => (vec![1.0; nw], 1.0 / overlap),
    };
    let synthesis = analysis.iter().map(|w| w * gain).collect();
    Ok(WindowPair { analysis, synthesis })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubbandFrame {
    pub block_index: usize,
    pub bins: Vec<Complex64>,
}

impl SubbandFrame {
    pub fn zeros(block_index: usize, num_bins: usize) -> Self {
        Self {
            block_index,
            bins: vec![Complex64::new(0.0, 0.0); num_bins],
        }
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.bins.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// exp(-j*pi*n/N_w) with the argument reduced modulo its period 2*N_w.
fn half_bin_phase(n: usize, nw: usize) -> Complex64 {
    let r = n % (2 * nw);
    Complex64::from_polar(1.0, -PI * r as f64 / nw as f64)
}

/// exp(-j*2*pi*k*n/N_w) with the argument reduced modulo N_w.
fn bin_phase(k: usize, n: usize, nw: usize) -> Complex64 {
    let r = (k * (n % nw)) % nw;
    Complex64::from_polar(1.0, -2.0 * PI * r as f64 / nw as f64)
}

/// Analysis engine holding the FFT plan; cheap to reuse across blocks.
pub struct Analyzer {
    config: FilterbankConfig,
    windows: WindowPair,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Analyzer {
    pub fn new(config: FilterbankConfig, windows: WindowPair) -> Result<Self> {
        config.validate()?;
        if windows.analysis.len() != config.window_size {
            return Err(Error::shape(format!(
                "analysis window length {} != window size {}",
                windows.analysis.len(),
                config.window_size
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(config.window_size);
        Ok(Self {
            config,
            windows,
            fft,
            scratch: vec![Complex64::new(0.0, 0.0); config.window_size],
        })
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    /// Transforms the block whose first sample has absolute index `l * N_h`.
    pub fn block(&mut self, block: &[f64], block_index: usize) -> SubbandFrame {
        let nw = self.config.window_size;
        let start = block_index * self.config.hop_size;
        for (m, slot) in self.scratch.iter_mut().enumerate() {
            *slot = half_bin_phase(start + m, nw) * (block[m] * self.windows.analysis[m]);
        }
        self.fft.process(&mut self.scratch);
        let bins = (0..self.config.num_bins)
            .map(|k| self.scratch[k] * bin_phase(k, start, nw))
            .collect();
        SubbandFrame { block_index, bins }
    }
}

/// One frame per hop over the whole signal.
pub fn analyze(
    signal: &[f64],
    config: &FilterbankConfig,
    windows: &WindowPair,
) -> Result<Vec<SubbandFrame>> {
    let nw = config.window_size;
    if signal.len() < nw {
        return Err(Error::Empty(format!(
            "signal of {} samples is shorter than one window ({nw})",
            signal.len()
        )));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("analysis input"));
    }
    let mut analyzer = Analyzer::new(*config, windows.clone())?;
    let count = (signal.len() - nw) / config.hop_size + 1;
    Ok((0..count)
        .map(|l| {
            let start = l * config.hop_size;
            analyzer.block(&signal[start..start + nw], l)
        })
        .collect())
}

/// Streaming front end: buffers input and emits frames as soon as a window fills.
pub struct StreamingAnalyzer {
    analyzer: Analyzer,
    buffer: Vec<f64>,
    next_block: usize,
}

impl StreamingAnalyzer {
    pub fn new(config: FilterbankConfig, windows: WindowPair) -> Result<Self> {
        Ok(Self {
            analyzer: Analyzer::new(config, windows)?,
            buffer: Vec::with_capacity(config.window_size * 2),
            next_block: 0,
        })
    }

    pub fn push(&mut self, samples: &[f64]) -> Vec<SubbandFrame> {
        self.buffer.extend_from_slice(samples);
        let nw = self.analyzer.config.window_size;
        let nh = self.analyzer.config.hop_size;
        let mut out = Vec::new();
        while self.buffer.len() >= nw {
            let frame = self.analyzer.block(&self.buffer[..nw], self.next_block);
            out.push(frame);
            self.next_block += 1;
            self.buffer.drain(..nh);
        }
        out
    }
}

/// Overlap-add reconstruction. Sample 0 of the output corresponds to the first
/// sample of the first frame's block.
pub fn synthesize(
    frames: &[SubbandFrame],
    config: &FilterbankConfig,
    windows: &WindowPair,
) -> Result<Vec<f64>> {
    config.validate()?;
    let (nw, nh, ns) = (config.window_size, config.hop_size, config.num_bins);
    if windows.synthesis.len() != nw {
        return Err(Error::shape("synthesis window length differs from window size"));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    for (i, f) in frames.iter().enumerate() {
        if f.bins.len() != ns {
            return Err(Error::shape(format!(
                "frame {} has {} bins, expected {ns}",
                f.block_index,
                f.bins.len()
            )));
        }
        if f.block_index != first.block_index + i {
            return Err(Error::shape("frames must have contiguous block indices"));
        }
    }
    let ifft = FftPlanner::new().plan_fft_inverse(nw);
    let origin = first.block_index * nh;
    let mut out = vec![0.0; (frames.len() - 1) * nh + nw];
    let mut buf = vec![Complex64::new(0.0, 0.0); nw];
    for frame in frames {
        let start = frame.block_index * nh;
        for k in 0..nw {
            let value = if k < ns {
                frame.bins[k]
            } else {
                frame.bins[nw - 1 - k].conj()
            };
            // conj of the analysis rotation re-references bin k to the block start
            buf[k] = value * bin_phase(k, start, nw).conj();
        }
        ifft.process(&mut buf);
        let offset = start - origin;
        for m in 0..nw {
            let sample = (buf[m] * half_bin_phase(start + m, nw).conj()).re / nw as f64;
            out[offset + m] += windows.synthesis[m] * sample;
        }
    }
    Ok(out)
}

/// Discrete Hilbert transform of a real sequence via the FFT sign mask.
/// DC and (for even lengths) Nyquist coefficients pass with unit weight.
pub fn hilbert(real: &[f64]) -> Vec<f64> {
    let n = real.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = real.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (i, c) in buf.iter_mut().enumerate() {
        let gain = if i == 0 || (n % 2 == 0 && i == half) {
            1.0
        } else if i < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.im / n as f64).collect()
}

/// Keeps the real part and replaces the imaginary part with the negative
/// Hilbert transform (along bins) of the real part.
pub fn enforce_analyticity(frame: &SubbandFrame) -> Result<SubbandFrame> {
    if !frame.is_finite() {
        return Err(Error::NonFinite("subband frame"));
    }
    let real: Vec<f64> = frame.bins.iter().map(|c| c.re).collect();
    let h = hilbert(&real);
    Ok(SubbandFrame {
        block_index: frame.block_index,
        bins: real
            .iter()
            .zip(&h)
            .map(|(&r, &hi)| Complex64::new(r, -hi))
            .collect(),
    })
}

/// `block_index,bin,re,im` rows with a header line.
pub fn write_frames_csv<W: Write>(mut out: W, frames: &[SubbandFrame]) -> Result<()> {
    writeln!(out, "block_index,bin,re,im")?;
    for f in frames {
        for (k, c) in f.bins.iter().enumerate() {
            writeln!(out, "{},{},{:e},{:e}", f.block_index, k, c.re, c.im)?;
        }
    }
    Ok(())
}
