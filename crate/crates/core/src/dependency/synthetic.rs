use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DependencyMap;
use crate::error::{Error, Result};
use crate::kalman::{put_complex, Reader};

const RECORD_MAGIC: &[u8; 4] = b"DSR1";
const MAX_HEADER: usize = 1 << 20;
const MAX_BINS: usize = 1024;
const MAX_HISTORY: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_bins: usize,
    /// Frames kept per example.
    pub history: usize,
    /// Probability that a map entry is set.
    pub sparsity: f64,
    /// Standard deviation of the complex measurement noise.
    pub noise: f64,
    /// Longest colouring filter applied to each input bin.
    pub max_source_taps: usize,
    /// Longest channel from an input bin to an output bin.
    pub max_channel_taps: usize,
    /// Replace the random channels with a unit pass-through.
    pub identity_channels: bool,
}

impl SyntheticConfig {
    pub fn new(num_bins: usize, history: usize) -> Self {
        Self {
            num_bins,
            history,
            sparsity: 0.3,
            noise: 0.1,
            max_source_taps: 8,
            max_channel_taps: 4,
            identity_channels: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::config("sparsity must be in [0, 1]"));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::config("noise level must be finite and non-negative"));
        }
        if self.num_bins == 0 || self.history == 0 || self.max_source_taps == 0 || self.max_channel_taps == 0 {
            return Err(Error::config("synthetic sizes must be positive"));
        }
        Ok(())
    }
}

/// Subband input and output histories (frame-major, oldest first) with the true map.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<Vec<Complex64>>,
    pub y: Vec<Vec<Complex64>>,
    pub label: DependencyMap,
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
}

/// Unit-energy complex filter of random length in `1..=max_taps`.
fn random_filter<R: Rng + ?Sized>(rng: &mut R, max_taps: usize) -> Vec<Complex64> {
    let n = rng.gen_range(1..=max_taps);
    let mut g: Vec<Complex64> = (0..n).map(|_| complex_normal(rng)).collect();
    let e = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if e > 0.0 {
        g.iter_mut().for_each(|z| *z /= e);
    }
    g
}

fn filter(signal: &[Complex64], g: &[Complex64]) -> Vec<Complex64> {
    (0..signal.len())
        .map(|t| g.iter().enumerate().filter(|(j, _)| *j <= t).map(|(j, c)| c * signal[t - j]).sum())
        .collect()
}

/// Builds one example directly in the subband domain: coloured noise per input
/// bin, each set map entry adds the input bin through its own random channel
/// into the output bin, then measurement noise is added.
pub fn generate_synthetic_example<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig) -> Result<Example> {
    cfg.validate()?;
    let ns = cfg.num_bins;
    let warmup = cfg.max_source_taps + cfg.max_channel_taps;
    let total = cfg.history + warmup;
    let sources: Vec<Vec<Complex64>> = (0..ns)
        .map(|_| {
            let w: Vec<Complex64> = (0..total).map(|_| complex_normal(rng)).collect();
            filter(&w, &random_filter(rng, cfg.max_source_taps))
        })
        .collect();
    let mut label = DependencyMap::empty(ns, ns);
    let mut outputs = vec![vec![Complex64::new(0.0, 0.0); total]; ns];
    for (ko, out) in outputs.iter_mut().enumerate() {
        for (k, src) in sources.iter().enumerate() {
            if rng.gen::<f64>() >= cfg.sparsity {
                continue;
            }
            label.set(ko, k, true);
            if cfg.identity_channels {
                out.iter_mut().zip(src).for_each(|(o, s)| *o += s);
            } else {
                let g = random_filter(rng, cfg.max_channel_taps);
                out.iter_mut().zip(filter(src, &g)).for_each(|(o, s)| *o += s);
            }
        }
        if cfg.noise > 0.0 {
            out.iter_mut().for_each(|o| *o += complex_normal(rng) * cfg.noise);
        }
    }
    let frames = |bins: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        (warmup..total).map(|t| bins.iter().map(|b| b[t]).collect()).collect()
    };
    Ok(Example {
        x: frames(&sources),
        y: frames(&outputs),
        label,
    })
}

pub fn generate_dataset<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig, count: usize) -> Result<Vec<Example>> {
    (0..count).map(|_| generate_synthetic_example(rng, cfg)).collect()
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    num_bins: usize,
    history: usize,
    label: Vec<String>,
}

impl Example {
    pub fn num_bins(&self) -> usize {
        self.label.rows()
    }

    pub fn history(&self) -> usize {
        self.x.len()
    }

    /// `DSR1`, u32 header length, JSON header with the label rows as 0/1
    /// strings, then `x` and `y` frames as little-endian complex f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let label = (0..self.label.rows())
            .map(|r| self.label.row(r).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        let header = serde_json::to_vec(&RecordHeader {
            num_bins: self.num_bins(),
            history: self.history(),
            label,
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for f in self.x.iter().chain(&self.y) {
            put_complex(&mut out, f);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RECORD_MAGIC {
            return Err(Error::format("bad dataset record magic"));
        }
        let len = r.u32()? as usize;
        if len > MAX_HEADER {
            return Err(Error::format("dataset record header too long"));
        }
        let h: RecordHeader = serde_json::from_slice(r.take(len)?)?;
        if !(1..=MAX_BINS).contains(&h.num_bins) || !(1..=MAX_HISTORY).contains(&h.history) {
            return Err(Error::format("dataset record dimensions out of range"));
        }
        if h.label.len() != h.num_bins {
            return Err(Error::format("label row count differs from bin count"));
        }
        let mut rows = Vec::with_capacity(h.num_bins);
        for s in &h.label {
            if s.len() != h.num_bins {
                return Err(Error::format("label row has wrong width"));
            }
            rows.push(
                s.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(Error::format("label characters must be 0 or 1")),
                    })
                    .collect::<Result<Vec<bool>>>()?,
            );
        }
        let label = DependencyMap::from_rows(&rows)?;
        let values = 2 * h.num_bins * h.history;
        if values.checked_mul(16) != Some(r.remaining()) {
            return Err(Error::format("dataset record length mismatch"));
        }
        let mut read = || (0..h.history).map(|_| r.complex(h.num_bins)).collect::<Result<Vec<_>>>();
        let x = read()?;
        let y = read()?;
        if x.iter().chain(&y).flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("dataset record"));
        }
        Ok(Self { x, y, label })
    }
}
