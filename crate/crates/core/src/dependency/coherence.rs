use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DependencyMap, InputLayout, MapDetector};
use crate::error::{Error, Result};

/// Frames of history the coherence detector needs at minimum.
pub const MIN_COHERENCE_HISTORY: usize = 64;

/// How per-lag coherences are combined into one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagAggregation {
    #[default]
    MaxLag,
    /// Sum over lags; suits inputs whose influence is spread over many frames.
    SumLag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    pub threshold: f64,
    /// Lags `0..max_lag` frames are examined.
    pub max_lag: usize,
    pub history: usize,
    pub aggregation: LagAggregation,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            max_lag: 16,
            history: 256,
            aggregation: LagAggregation::MaxLag,
        }
    }
}

/// Squared magnitude of the energy-normalised correlation between input
/// column `c` delayed by each lag and output bin `k`, aggregated over lags.
/// `inputs[t][c]` and `outputs[t][k]` are indexed by frame first.
pub fn coherence_scores(
    inputs: &[Vec<Complex64>],
    outputs: &[Vec<Complex64>],
    max_lag: usize,
    aggregation: LagAggregation,
) -> Result<Vec<Vec<f64>>> {
    let frames = inputs.len();
    if outputs.len() != frames {
        return Err(Error::shape("input and output histories differ in length"));
    }
    if frames < MIN_COHERENCE_HISTORY {
        return Err(Error::NeedsMoreData {
            have: frames,
            need: MIN_COHERENCE_HISTORY,
        });
    }
    if max_lag == 0 || max_lag >= frames {
        return Err(Error::config("lag count must be in 1..history"));
    }
    let n_in = inputs[0].len();
    let n_out = outputs[0].len();
    if inputs.iter().any(|f| f.len() != n_in) || outputs.iter().any(|f| f.len() != n_out) {
        return Err(Error::shape("ragged history"));
    }
    // energies of the overlapping ranges for every lag
    let input_energy: Vec<Vec<f64>> = (0..max_lag)
        .map(|lag| {
            (0..n_in)
                .map(|c| inputs[..frames - lag].iter().map(|f| f[c].norm_sqr()).sum())
                .collect()
        })
        .collect();
    let output_energy: Vec<Vec<f64>> = (0..max_lag)
        .map(|lag| {
            (0..n_out)
                .map(|k| outputs[lag..].iter().map(|f| f[k].norm_sqr()).sum())
                .collect()
        })
        .collect();
    Ok((0..n_out)
        .into_par_iter()
        .map(|k| {
            let mut scores = vec![0.0; n_in];
            let mut cross = vec![Complex64::new(0.0, 0.0); n_in];
            for lag in 0..max_lag {
                cross.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for t in lag..frames {
                    let y = outputs[t][k].conj();
                    for (acc, u) in cross.iter_mut().zip(&inputs[t - lag]) {
                        *acc += u * y;
                    }
                }
                for c in 0..n_in {
                    let denom = input_energy[lag][c] * output_energy[lag][k];
                    let msc = if denom > 0.0 { cross[c].norm_sqr() / denom } else { 0.0 };
                    match aggregation {
                        LagAggregation::MaxLag => scores[c] = f64::max(scores[c], msc),
                        LagAggregation::SumLag => scores[c] += msc,
                    }
                }
            }
            scores
        })
        .collect())
}

/// Marks `(k, c)` when the aggregated coherence exceeds the threshold.
pub fn coherence_detector(
    inputs: &[Vec<Complex64>],
    outputs: &[Vec<Complex64>],
    config: &CoherenceConfig,
) -> Result<DependencyMap> {
    let scores = coherence_scores(inputs, outputs, config.max_lag, config.aggregation)?;
    let rows: Vec<Vec<bool>> = scores
        .iter()
        .map(|r| r.iter().map(|&s| s > config.threshold).collect())
        .collect();
    DependencyMap::from_rows(&rows)
}

/// Training-free detector backed by [`coherence_detector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceDetector {
    pub config: CoherenceConfig,
}

impl MapDetector for CoherenceDetector {
    fn history(&self) -> usize {
        self.config.history.max(MIN_COHERENCE_HISTORY)
    }

    fn detect(
        &self,
        layout: InputLayout,
        x_frames: &[Vec<Complex64>],
        y_frames: &[Vec<Complex64>],
    ) -> Result<DependencyMap> {
        let inputs: Vec<Vec<Complex64>> = x_frames.iter().map(|f| layout.regressor(f)).collect();
        coherence_detector(&inputs, y_frames, &self.config)
    }
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
    fn identical_signals_give_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&mut rng, 128, 6);
        let cfg = CoherenceConfig {
            threshold: 0.5,
            max_lag: 4,
            ..Default::default()
        };
        let map = coherence_detector(&x, &x, &cfg).unwrap();
        assert_eq!(map, InputLayout::Positive.identity_map(6));
    }

    #[test]
    fn short_history_needs_more_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = noise(&mut rng, 63, 2);
        assert!(matches!(
            coherence_detector(&x, &x, &CoherenceConfig::default()),
            Err(Error::NeedsMoreData { have: 63, need: 64 })
        ));
    }

    #[test]
    fn shifted_bins_detected_off_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = noise(&mut rng, 200, 8);
        // output bin k is input bin k + 2, one frame late
        let y: Vec<Vec<Complex64>> = (0..200)
            .map(|t| {
                (0..8)
                    .map(|k| if t > 0 && k + 2 < 8 { x[t - 1][k + 2] } else { Complex64::new(0.0, 0.0) })
                    .collect()
            })
            .collect();
        let cfg = CoherenceConfig {
            threshold: 0.5,
            max_lag: 4,
            ..Default::default()
        };
        let map = coherence_detector(&x, &y, &cfg).unwrap();
        for k in 0..8 {
            let want: Vec<usize> = if k + 2 < 8 { vec![k + 2] } else { vec![] };
            assert_eq!(map.support(k), want);
        }
    }

    #[test]
    fn zero_history_scores_zero() {
        let x = vec![vec![Complex64::new(0.0, 0.0); 3]; 64];
        let s = coherence_scores(&x, &x, 2, LagAggregation::SumLag).unwrap();
        assert!(s.iter().flatten().all(|&v| v == 0.0));
    }
}
