use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{build_features, FeatureConfig};
use super::network::{Architecture, DetectorNetwork, DropoutMasks};
use super::synthetic::Example;
use super::{DependencyMap, InputLayout, MapDetector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: 32,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::config("invalid Adam constants"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainingConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Losses at the end of an epoch; epoch 0 is the untrained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_examples(net: &DetectorNetwork, examples: &[Example], features: &FeatureConfig) -> Result<()> {
    let arch = net.architecture();
    if arch.frames != features.frames {
        return Err(Error::config(format!(
            "network expects {} frames, features give {}",
            arch.frames, features.frames
        )));
    }
    for ex in examples {
        if ex.num_bins() != arch.num_bins || ex.label.cols() != arch.num_bins {
            return Err(Error::shape("example bin count differs from network"));
        }
    }
    Ok(())
}

/// BCE and detection scores over every row of every example, no dropout.
pub fn evaluate(
    net: &DetectorNetwork,
    examples: &[Example],
    features: &FeatureConfig,
    threshold: f64,
) -> Result<Scores> {
    check_examples(net, examples, features)?;
    if examples.is_empty() {
        return Err(Error::Empty("no examples to evaluate".into()));
    }
    let ns = net.architecture().num_bins;
    let per_row: Vec<(f64, [usize; 3])> = (0..examples.len() * ns)
        .into_par_iter()
        .map(|i| {
            let (ex, row) = (&examples[i / ns], i % ns);
            let t = build_features(&ex.x, &ex.y, row, features)?;
            let logits = net.logits(&t)?;
            let labels = ex.label.row(row);
            let mut c = [0usize; 3];
            for (&z, &y) in logits.iter().zip(labels) {
                let hit = super::network::sigmoid(z) >= threshold;
                match (hit, y) {
                    (true, true) => c[0] += 1,
                    (true, false) => c[1] += 1,
                    (false, true) => c[2] += 1,
                    _ => {}
                }
            }
            Ok((super::network::bce_with_logits(&logits, labels), c))
        })
        .collect::<Result<_>>()?;
    let loss = per_row.iter().map(|r| r.0).sum::<f64>() / per_row.len() as f64;
    let [tp, fp, fnn] = per_row.iter().fold([0usize; 3], |a, r| [a[0] + r.1[0], a[1] + r.1[1], a[2] + r.1[2]]);
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Scores {
        loss,
        precision,
        recall,
        f1,
    })
}

/// Adam on mean BCE over all `(example, output row)` pairs in `train_set`.
/// Returns the loss curve with the untrained network as epoch 0.
pub fn train(
    net: &mut DetectorNetwork,
    train_set: &[Example],
    validation: &[Example],
    features: &FeatureConfig,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    features.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Empty("training and validation sets must be nonempty".into()));
    }
    check_examples(net, train_set, features)?;
    check_examples(net, validation, features)?;
    let arch = net.architecture();
    let ns = arch.num_bins;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.parameter_count());
    let mut samples: Vec<(usize, usize)> = (0..train_set.len()).flat_map(|e| (0..ns).map(move |r| (e, r))).collect();
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train: evaluate(net, train_set, features, 0.5)?.loss,
        validation: evaluate(net, validation, features, 0.5)?.loss,
    }];
    for epoch in 1..=cfg.epochs {
        samples.shuffle(&mut rng);
        for batch in samples.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let model = &*net;
            let grads: Vec<Vec<f64>> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&(e, row), &seed)| {
                    let ex = &train_set[e];
                    let t = build_features(&ex.x, &ex.y, row, features)?;
                    let masks = DropoutMasks::sample(&arch, cfg.dropout, &mut ChaCha8Rng::seed_from_u64(seed));
                    Ok(model.loss_and_gradient(&t, ex.label.row(row), Some(&masks))?.1)
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; net.parameter_count()];
            for g in &grads {
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let scale = (batch.len() as f64).recip();
            grad.iter_mut().for_each(|v| *v *= scale);
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(net.params_mut(), &grad, cfg);
        }
        let train_loss = evaluate(net, train_set, features, 0.5)?.loss;
        let validation_loss = evaluate(net, validation, features, 0.5)?.loss;
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                detail: format!("loss became {train_loss} / {validation_loss}"),
            });
        }
        curve.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: validation_loss,
        });
    }
    Ok(curve)
}

/// Square map whose row `k'` marks input bins with probability `>= threshold`.
pub fn predict_map(
    net: &DetectorNetwork,
    x_frames: &[Vec<Complex64>],
    y_frames: &[Vec<Complex64>],
    features: &FeatureConfig,
    threshold: f64,
) -> Result<DependencyMap> {
    let ns = net.architecture().num_bins;
    let rows: Vec<Vec<bool>> = (0..ns)
        .into_par_iter()
        .map(|row| {
            let t = build_features(x_frames, y_frames, row, features)?;
            Ok(net.forward(&t)?.iter().map(|&p| p >= threshold).collect())
        })
        .collect::<Result<_>>()?;
    DependencyMap::from_rows(&rows)
}

/// [`MapDetector`] backed by a trained network. In the two-sided layout the
/// conjugate columns come from a second pass over the mirrored conjugate input.
#[derive(Debug, Clone)]
pub struct NetworkDetector {
    pub network: DetectorNetwork,
    pub features: FeatureConfig,
    pub threshold: f64,
}

impl NetworkDetector {
    pub fn new(network: DetectorNetwork, features: FeatureConfig, threshold: f64) -> Result<Self> {
        features.validate()?;
        let arch: Architecture = network.architecture();
        if arch.frames != features.frames {
            return Err(Error::config(format!(
                "network expects {} frames, features give {}",
                arch.frames, features.frames
            )));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::config("detector threshold must be in [0, 1]"));
        }
        Ok(Self {
            network,
            features,
            threshold,
        })
    }
}

impl MapDetector for NetworkDetector {
    fn history(&self) -> usize {
        self.features.history
    }

    fn detect(
        &self,
        layout: InputLayout,
        x_frames: &[Vec<Complex64>],
        y_frames: &[Vec<Complex64>],
    ) -> Result<DependencyMap> {
        let direct = predict_map(&self.network, x_frames, y_frames, &self.features, self.threshold)?;
        let ns = direct.rows();
        match layout {
            InputLayout::Positive => Ok(direct),
            InputLayout::TwoSided => {
                let mirrored: Vec<Vec<Complex64>> = x_frames
                    .iter()
                    .map(|f| f.iter().rev().map(|z| z.conj()).collect())
                    .collect();
                let conj = predict_map(&self.network, &mirrored, y_frames, &self.features, self.threshold)?;
                let mut map = DependencyMap::empty(ns, 2 * ns);
                for r in 0..ns {
                    for c in 0..ns {
                        map.set(r, c, conj.get(r, c));
                        map.set(r, ns + c, direct.get(r, c));
                    }
                }
                Ok(map)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependency::synthetic::{generate_dataset, SyntheticConfig};

    fn setup(ns: usize, l: usize, n: usize, seed: u64) -> (DetectorNetwork, Vec<Example>, FeatureConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fc = FeatureConfig { frames: l, history: 4 * l };
        let data = generate_dataset(&mut rng, &SyntheticConfig::new(ns, fc.history), n).unwrap();
        let net = DetectorNetwork::new(Architecture::new(ns, l), &mut rng).unwrap();
        (net, data, fc)
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let (mut net, data, fc) = setup(4, 4, 1, 1);
        let before = net.clone();
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..Default::default()
        };
        let curve = train(&mut net, &data, &data, &fc, &cfg).unwrap();
        assert_eq!(net, before);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].train, curve[1].train);
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            epochs: 2,
            ..Default::default()
        };
        let run = || {
            let (mut net, data, fc) = setup(4, 4, 8, 2);
            let curve = train(&mut net, &data[..6], &data[6..], &fc, &cfg).unwrap();
            (curve, net)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn half_probabilities_tie_to_true() {
        let net = DetectorNetwork::zeros(Architecture::new(4, 4)).unwrap();
        let (_, data, fc) = setup(4, 4, 1, 3);
        let map = predict_map(&net, &data[0].x, &data[0].y, &fc, 0.5).unwrap();
        assert_eq!(map, DependencyMap::full(4, 4));
    }

    #[test]
    fn two_sided_detection_has_double_width() {
        let (net, data, fc) = setup(4, 4, 1, 4);
        let det = NetworkDetector::new(net, fc, 0.5).unwrap();
        let map = det.detect(InputLayout::TwoSided, &data[0].x, &data[0].y).unwrap();
        assert_eq!((map.rows(), map.cols()), (4, 8));
    }
}
