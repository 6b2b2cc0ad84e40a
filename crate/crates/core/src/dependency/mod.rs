//! Cross-frequency dependency maps and their detectors.

mod coherence;
mod features;
mod map;
mod network;
mod synthetic;
mod training;

use num_complex::Complex64;

use crate::error::Result;

pub use coherence::{
    coherence_detector, coherence_scores, CoherenceConfig, CoherenceDetector, LagAggregation,
    MIN_COHERENCE_HISTORY,
};
pub use features::{build_features, build_raw_features, FeatureConfig, FeatureTensor, FEATURE_CHANNELS};
pub use map::{write_mean_csv, DependencyMap, InputLayout};
pub use network::{
    bce_with_logits, dropout_mask, sigmoid, Architecture, DetectorNetwork, DropoutMasks, CONV_KERNELS,
    CONV_STRIDES, DEFAULT_CONV_CHANNELS, LEAKY_SLOPE,
};
pub use synthetic::{generate_dataset, generate_synthetic_example, Example, SyntheticConfig};
pub use training::{evaluate, predict_map, train, Adam, EpochLoss, NetworkDetector, Scores, TrainingConfig};

/// Anything that turns recent subband history into a dependency map.
pub trait MapDetector {
    /// Frames of history consumed by [`MapDetector::detect`].
    fn history(&self) -> usize;

    /// `x_frames` and `y_frames` hold positive-frequency bins, oldest first.
    /// The returned map has one row per output bin and `layout.width` columns.
    fn detect(
        &self,
        layout: InputLayout,
        x_frames: &[Vec<Complex64>],
        y_frames: &[Vec<Complex64>],
    ) -> Result<DependencyMap>;
}
