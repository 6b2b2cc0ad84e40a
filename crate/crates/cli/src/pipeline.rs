//! Frame loop shared by the `identify` command and the experiment harness.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use subid_core::dependency::{DependencyMap, MapDetector};
use subid_core::filterbank::{analyze, enforce_analyticity, make_window_pair, synthesize, FilterbankConfig, SubbandFrame};
use subid_core::lattice::{LatticeConfig, LatticeFilter};
use subid_core::metrics::ErrorReport;
use subid_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub filterbank: FilterbankConfig,
    pub lattice: LatticeConfig,
    pub enforce_analyticity: bool,
    /// Frames between dependency-map refreshes.
    pub refresh_frames: usize,
    pub skip_fraction: f64,
}

/// Pipeline failure tagged with the module and frame where it happened.
#[derive(Debug, thiserror::Error)]
#[error("{module} failed at frame {frame}: {source}")]
pub struct PipelineError {
    pub module: &'static str,
    pub frame: usize,
    #[source]
    pub source: Error,
}

impl PipelineError {
    fn at(module: &'static str, frame: usize) -> impl FnOnce(Error) -> Self {
        move |source| Self { module, frame, source }
    }

    pub fn is_config(&self) -> bool {
        matches!(self.source, Error::Config(_))
    }
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub residual: Vec<f64>,
    pub report: ErrorReport,
    /// Active map after each promotion, starting with the initial one.
    pub map_history: Vec<(usize, DependencyMap)>,
    /// Every map the detector produced.
    pub detected_maps: Vec<DependencyMap>,
    pub final_map: DependencyMap,
    pub stage_energies: Vec<Vec<f64>>,
    pub xi2: Vec<f64>,
    pub promotions: usize,
    pub covariance_resets: u64,
}

/// Runs analysis, online map detection, lattice adaptation, synthesis of the
/// residual and evaluation against `y`.
pub fn identify_signals(
    x: &[f64],
    y: &[f64],
    settings: &PipelineSettings,
    detector: Option<&dyn MapDetector>,
    initial_map: Option<DependencyMap>,
) -> Result<IdentifyOutcome, PipelineError> {
    let fb = &settings.filterbank;
    let n = x.len().min(y.len());
    let windows = make_window_pair(fb).map_err(PipelineError::at("filterbank", 0))?;
    let mut xf = analyze(&x[..n], fb, &windows).map_err(PipelineError::at("filterbank", 0))?;
    let mut yf = analyze(&y[..n], fb, &windows).map_err(PipelineError::at("filterbank", 0))?;
    if settings.enforce_analyticity {
        for (l, (a, b)) in xf.iter_mut().zip(yf.iter_mut()).enumerate() {
            *a = enforce_analyticity(a).map_err(PipelineError::at("filterbank", l))?;
            *b = enforce_analyticity(b).map_err(PipelineError::at("filterbank", l))?;
        }
    }
    let lc = settings.lattice;
    if lc.num_bins != fb.num_bins {
        return Err(PipelineError::at("lattice", 0)(Error::Config(format!(
            "lattice has {} bins, filterbank {}",
            lc.num_bins, fb.num_bins
        ))));
    }
    let map = initial_map.unwrap_or_else(|| lc.layout.identity_map(lc.num_bins));
    let mut lattice = LatticeFilter::new(lc, map.clone()).map_err(PipelineError::at("lattice", 0))?;
    let mut map_history = vec![(0, map)];
    let mut detected_maps = Vec::new();
    let mut residual_frames = Vec::with_capacity(xf.len());
    let mut stage_energies = Vec::with_capacity(xf.len());
    let mut xi2 = Vec::with_capacity(xf.len());
    let mut frame_energies = Vec::with_capacity(xf.len());
    let x_bins: Vec<Vec<Complex64>> = xf.iter().map(|f| f.bins.clone()).collect();
    let y_bins: Vec<Vec<Complex64>> = yf.iter().map(|f| f.bins.clone()).collect();
    for l in 0..xf.len() {
        if let Some(det) = detector {
            let h = det.history();
            if l > 0 && settings.refresh_frames > 0 && l % settings.refresh_frames == 0 && l >= h {
                let new_map = det
                    .detect(lc.layout, &x_bins[l - h..l], &y_bins[l - h..l])
                    .map_err(PipelineError::at("dependency", l))?;
                lattice
                    .apply_map_change(&new_map)
                    .map_err(PipelineError::at("lattice", l))?;
                detected_maps.push(new_map);
            }
        }
        let r = lattice
            .process_frame(&xf[l], &yf[l])
            .map_err(PipelineError::at("lattice", l))?;
        if r.promoted {
            map_history.push((l, lattice.map().clone()));
        }
        frame_energies.push(r.residual.iter().map(|z| z.norm_sqr()).sum());
        stage_energies.push(r.stage_error_energy);
        xi2.push(r.xi2);
        residual_frames.push(SubbandFrame {
            block_index: xf[l].block_index,
            bins: r.residual,
        });
    }
    let mut residual = synthesize(&residual_frames, fb, &windows).map_err(PipelineError::at("filterbank", xf.len()))?;
    // samples past the last hop are not covered by every overlapping window
    let covered = residual_frames.len() * fb.hop_size;
    residual.truncate(covered.min(n));
    let report = ErrorReport::new(&residual, &y[..residual.len()], settings.skip_fraction, frame_energies)
        .map_err(PipelineError::at("metrics", xf.len()))?;
    Ok(IdentifyOutcome {
        residual,
        report,
        map_history,
        detected_maps,
        final_map: lattice.map().clone(),
        stage_energies,
        xi2,
        promotions: lattice.promotions(),
        covariance_resets: lattice.resets(),
    })
}
