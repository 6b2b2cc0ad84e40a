use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Frames `L` seen by the network along its time axis.
    pub frames: usize,
    /// Frames over which the channel-5 correlation is accumulated; at least `frames`.
    pub history: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            history: 64,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.history < self.frames {
            return Err(Error::config(format!(
                "feature frames {} must be in 1..=history {}",
                self.frames, self.history
            )));
        }
        Ok(())
    }
}

/// Real tensor of shape `5 x num_bins x frames`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    num_bins: usize,
    frames: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(num_bins: usize, frames: usize) -> Self {
        Self {
            num_bins,
            frames,
            data: vec![0.0; FEATURE_CHANNELS * num_bins * frames],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> [usize; 3] {
        [FEATURE_CHANNELS, self.num_bins, self.frames]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, bin: usize, t: usize) -> f64 {
        self.data[(channel * self.num_bins + bin) * self.frames + t]
    }

    fn set(&mut self, channel: usize, bin: usize, t: usize, v: f64) {
        self.data[(channel * self.num_bins + bin) * self.frames + t] = v;
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.num_bins * self.frames;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Zero mean and unit variance per channel; constant channels are only centred.
    pub fn standardize(&mut self) {
        let n = self.num_bins * self.frames;
        for ch in self.data.chunks_mut(n) {
            let mean = ch.iter().sum::<f64>() / n as f64;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let scale = if var > 1e-24 { var.sqrt().recip() } else { 1.0 };
            ch.iter_mut().for_each(|v| *v = (*v - mean) * scale);
        }
    }
}

/// Unstandardized features for the query "which input bins drive output bin `out_bin`".
///
/// Channels 0-1 are Re/Im of the last `L` input frames. Channels 2-3 hold the
/// latest output sample of `out_bin`, tiled along time on row `out_bin` and
/// zero elsewhere. Channel 4 at `(k, L-1-tau)` is the energy-normalised
/// magnitude of the correlation between input bin `k` delayed by `tau` and
/// output bin `out_bin`, over the last `history` frames.
pub fn build_raw_features(
    x_frames: &[Vec<Complex64>],
    y_frames: &[Vec<Complex64>],
    out_bin: usize,
    cfg: &FeatureConfig,
) -> Result<FeatureTensor> {
    cfg.validate()?;
    let have = x_frames.len().min(y_frames.len());
    if have < cfg.history {
        return Err(Error::NeedsMoreData {
            have,
            need: cfg.history,
        });
    }
    let x = &x_frames[x_frames.len() - cfg.history..];
    let y = &y_frames[y_frames.len() - cfg.history..];
    let ns = x[0].len();
    if x.iter().any(|f| f.len() != ns) || y.iter().any(|f| f.len() != ns) {
        return Err(Error::shape("feature history frames differ in width"));
    }
    if out_bin >= ns {
        return Err(Error::shape(format!("output bin {out_bin} outside {ns} bins")));
    }
    let l = cfg.frames;
    let h = cfg.history;
    let mut t = FeatureTensor::zeros(ns, l);
    for (i, frame) in x[h - l..].iter().enumerate() {
        for (k, z) in frame.iter().enumerate() {
            t.set(0, k, i, z.re);
            t.set(1, k, i, z.im);
        }
    }
    let latest = y[h - 1][out_bin];
    for i in 0..l {
        t.set(2, out_bin, i, latest.re);
        t.set(3, out_bin, i, latest.im);
    }
    for tau in 0..l {
        let ey: f64 = y[tau..].iter().map(|f| f[out_bin].norm_sqr()).sum();
        for k in 0..ns {
            let mut cross = Complex64::new(0.0, 0.0);
            let mut ex = 0.0;
            for s in tau..h {
                let u = x[s - tau][k];
                cross += u * y[s][out_bin].conj();
                ex += u.norm_sqr();
            }
            let denom = (ex * ey).sqrt();
            let c = if denom > 0.0 { cross.norm() / denom } else { 0.0 };
            t.set(4, k, l - 1 - tau, c);
        }
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature tensor"));
    }
    Ok(t)
}

/// [`build_raw_features`] followed by per-channel standardization.
pub fn build_features(
    x_frames: &[Vec<Complex64>],
    y_frames: &[Vec<Complex64>],
    out_bin: usize,
    cfg: &FeatureConfig,
) -> Result<FeatureTensor> {
    let mut t = build_raw_features(x_frames, y_frames, out_bin, cfg)?;
    t.standardize();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, frames: usize, bins: usize) -> Vec<Vec<Complex64>> {
        (0..frames)
            .map(|_| {
                (0..bins)
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn shape_follows_bins_and_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&mut rng, 64, 32);
        let t = build_features(&x, &x, 3, &FeatureConfig::default()).unwrap();
        assert_eq!(t.shape(), [5, 32, 16]);
        assert_eq!(t.data().len(), 5 * 32 * 16);
    }

    #[test]
    fn silence_gives_zero_tensor() {
        let x = vec![vec![Complex64::new(0.0, 0.0); 8]; 64];
        let t = build_features(&x, &x, 0, &FeatureConfig::default()).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_system_peaks_at_lag_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = noise(&mut rng, 64, 8);
        let cfg = FeatureConfig::default();
        for k in 0..8 {
            let t = build_raw_features(&x, &x, k, &cfg).unwrap();
            let lag0 = t.get(4, k, cfg.frames - 1);
            assert!((lag0 - 1.0).abs() < 1e-12);
            for i in 0..cfg.frames - 1 {
                assert!(t.get(4, k, i) < lag0);
            }
            assert!(t.channel(4).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn output_channels_only_on_query_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = noise(&mut rng, 64, 6);
        let y = noise(&mut rng, 64, 6);
        let t = build_raw_features(&x, &y, 2, &FeatureConfig::default()).unwrap();
        for k in 0..6 {
            for i in 0..16 {
                let want = if k == 2 { y[63][2].re } else { 0.0 };
                assert_eq!(t.get(2, k, i), want);
            }
        }
        assert_eq!(t.get(0, 5, 15), x[63][5].re);
        assert_eq!(t.get(1, 0, 0), x[48][0].im);
    }

    #[test]
    fn standardized_channels_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = noise(&mut rng, 64, 8);
        let y = noise(&mut rng, 64, 8);
        let t = build_features(&x, &y, 1, &FeatureConfig::default()).unwrap();
        for c in 0..5 {
            let ch = t.channel(c);
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn short_history_needs_more_data() {
        let x = vec![vec![Complex64::new(1.0, 0.0); 4]; 10];
        assert!(matches!(
            build_features(&x, &x, 0, &FeatureConfig::default()),
            Err(Error::NeedsMoreData { have: 10, need: 64 })
        ));
    }
}
