use std::fmt::Write as _;
use std::io::ErrorKind;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use subid_core::dependency::{
    evaluate, generate_dataset, train, write_mean_csv, Architecture, CoherenceDetector, DependencyMap,
    DetectorNetwork, EpochLoss, InputLayout, MapDetector, NetworkDetector, Scores, SyntheticConfig, TrainingConfig,
};
use subid_core::systems::{am_modulate, band_limited_noise, hysteresis_pipeline};
use subid_core::wav::{encode_wav, read_wav_file, WavAudio, WavEncoding};

use crate::artifacts::OutputDir;
use crate::config::{DetectorKind, Preset, RunConfig};
use crate::error::CliError;
use crate::pipeline::{identify_signals, IdentifyOutcome, PipelineSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub excitation: Vec<f64>,
    pub measurement: Vec<f64>,
    pub sample_rate: f64,
}

fn read_input(path: &Path) -> Result<WavAudio, CliError> {
    read_wav_file(path).map_err(|e| match e {
        subid_core::Error::Io(io) if io.kind() == ErrorKind::NotFound => {
            CliError::Config(format!("{} does not exist", path.display()))
        }
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

/// Excitation and measurement for the configured preset. Noise and channel
/// draws come from one generator seeded with `cfg.seed`.
pub fn simulate_signals(cfg: &RunConfig) -> Result<Signals, CliError> {
    let s = &cfg.signal;
    if cfg.preset == Preset::WavPair {
        let (Some(xp), Some(yp)) = (&s.excitation_wav, &s.measurement_wav) else {
            return Err(CliError::Config("preset wav-pair needs both WAV paths".into()));
        };
        let x = read_input(xp)?;
        let y = read_input(yp)?;
        if x.sample_rate != y.sample_rate {
            return Err(CliError::Config(format!(
                "sample rates differ: {} Hz vs {} Hz",
                x.sample_rate, y.sample_rate
            )));
        }
        let n = x.samples.len().min(y.samples.len());
        return Ok(Signals {
            excitation: x.samples[..n].to_vec(),
            measurement: y.samples[..n].to_vec(),
            sample_rate: f64::from(x.sample_rate),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = (s.duration_s * s.sample_rate).round() as usize;
    let x = band_limited_noise(len, s.excitation_cutoff, s.excitation_std, &mut rng)?;
    let y = match cfg.preset {
        Preset::Hysteresis => hysteresis_pipeline(&x, &s.bouc_wen, s.rt60_ms, s.sample_rate, &mut rng)?,
        Preset::Modulation => am_modulate(&x),
        Preset::Identity => x.clone(),
        Preset::WavPair => unreachable!(),
    };
    Ok(Signals {
        excitation: x,
        measurement: y,
        sample_rate: s.sample_rate,
    })
}

/// Summary of a set of maps with one row per output bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapStatistics {
    pub maps: usize,
    pub mean_entries: f64,
    pub density: f64,
    /// Mean row density of the lowest quarter of output bins.
    pub low_quartile_row_density: f64,
    pub high_quartile_row_density: f64,
    /// Fraction of entries whose input sits `num_bins/2 +- 2` bins from the output bin.
    pub shift_band_fraction: f64,
}

pub fn map_statistics(maps: &[DependencyMap], layout: InputLayout) -> Option<MapStatistics> {
    let first = maps.first()?;
    let ns = first.rows();
    let q = (ns / 4).max(1);
    let count = maps.len() as f64;
    let mean_rows = |rows: std::ops::Range<usize>| -> f64 {
        let n = rows.len() as f64;
        maps.iter().map(|m| rows.clone().map(|r| m.row_density(r)).sum::<f64>() / n).sum::<f64>() / count
    };
    let half = (ns / 2) as isize;
    let (mut total, mut in_band) = (0usize, 0usize);
    for m in maps {
        for k in 0..m.rows() {
            for c in m.support(k) {
                total += 1;
                let d = (k as isize - layout.signed_bin(ns, c)).abs();
                if (half - 2..=half + 2).contains(&d) {
                    in_band += 1;
                }
            }
        }
    }
    Some(MapStatistics {
        maps: maps.len(),
        mean_entries: total as f64 / count,
        density: maps.iter().map(DependencyMap::density).sum::<f64>() / count,
        low_quartile_row_density: mean_rows(0..q),
        high_quartile_row_density: mean_rows(ns - q..ns),
        shift_band_fraction: if total > 0 { in_band as f64 / total as f64 } else { 0.0 },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifyReport {
    pub config: RunConfig,
    pub samples: usize,
    pub frames: usize,
    pub delta_db: f64,
    pub erle_db: f64,
    pub evaluated_from: usize,
    pub promotions: usize,
    pub covariance_resets: u64,
    pub map_refreshes: usize,
    pub final_map: MapStatistics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detected_maps: Option<MapStatistics>,
}

pub fn build_detector(cfg: &RunConfig) -> Result<Option<Box<dyn MapDetector>>, CliError> {
    Ok(match cfg.detector.kind {
        DetectorKind::None => None,
        DetectorKind::Coherence => Some(Box::new(CoherenceDetector {
            config: cfg.detector.coherence,
        })),
        DetectorKind::Network => {
            let path = cfg.detector.checkpoint.as_ref().expect("validated");
            let bytes = std::fs::read(path).map_err(|e| match e.kind() {
                ErrorKind::NotFound => CliError::Config(format!("checkpoint {} does not exist", path.display())),
                _ => CliError::from(e),
            })?;
            let net = DetectorNetwork::from_bytes(&bytes)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let arch = net.architecture();
            if arch.num_bins != cfg.filterbank.num_bins {
                return Err(CliError::Config(format!(
                    "checkpoint has {} bins, filterbank has {}",
                    arch.num_bins, cfg.filterbank.num_bins
                )));
            }
            Some(Box::new(NetworkDetector::new(net, cfg.features(), cfg.detector.threshold)?))
        }
    })
}

pub fn pipeline_settings(cfg: &RunConfig) -> PipelineSettings {
    PipelineSettings {
        filterbank: cfg.filterbank,
        lattice: cfg.lattice,
        enforce_analyticity: cfg.enforce_analyticity,
        refresh_frames: cfg.detector.refresh_frames,
        skip_fraction: cfg.evaluation.skip_fraction,
    }
}

/// Runs identification on in-memory signals without touching the filesystem.
pub fn identify(cfg: &RunConfig, signals: &Signals) -> Result<IdentifyOutcome, CliError> {
    let detector = build_detector(cfg)?;
    Ok(identify_signals(
        &signals.excitation,
        &signals.measurement,
        &pipeline_settings(cfg),
        detector.as_deref(),
        None,
    )?)
}

fn trace_csv(outcome: &IdentifyOutcome) -> String {
    let mut s = String::from("frame,residual_energy,xi2\n");
    for (l, (e, xi)) in outcome.report.frame_energies.iter().zip(&outcome.xi2).enumerate() {
        let _ = writeln!(s, "{l},{e},{xi}");
    }
    s
}

pub fn cmd_identify(cfg: &RunConfig) -> Result<IdentifyReport, CliError> {
    cfg.validate()?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let signals = simulate_signals(cfg)?;
    let outcome = identify(cfg, &signals)?;
    let layout = cfg.lattice.layout;
    let report = IdentifyReport {
        config: cfg.clone(),
        samples: outcome.residual.len(),
        frames: outcome.report.frame_energies.len(),
        delta_db: outcome.report.delta_db,
        erle_db: outcome.report.erle_db,
        evaluated_from: outcome.report.evaluated_from,
        promotions: outcome.promotions,
        covariance_resets: outcome.covariance_resets,
        map_refreshes: outcome.detected_maps.len(),
        final_map: map_statistics(std::slice::from_ref(&outcome.final_map), layout).expect("one map"),
        detected_maps: map_statistics(&outcome.detected_maps, layout),
    };
    let residual = WavAudio {
        sample_rate: signals.sample_rate.round() as u32,
        samples: outcome.residual.clone(),
    };
    out.write("residual.wav", &encode_wav(&residual, WavEncoding::Float32)?)?;
    out.write("error_trace.csv", trace_csv(&outcome).as_bytes())?;
    let mut map_csv = Vec::new();
    outcome.final_map.write_csv(&mut map_csv)?;
    out.write("dependency_map.csv", &map_csv)?;
    let mut heat = Vec::new();
    if outcome.detected_maps.is_empty() {
        write_mean_csv(std::slice::from_ref(&outcome.final_map), &mut heat)?;
    } else {
        write_mean_csv(&outcome.detected_maps, &mut heat)?;
    }
    out.write("dependency_heatmap.csv", &heat)?;
    out.write_json("report.json", &report)?;
    out.finish()?;
    Ok(report)
}

/// Untrained network for the configured shape, drawn from its own stream of the run seed.
pub fn initial_network(cfg: &RunConfig) -> Result<DetectorNetwork, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    Ok(DetectorNetwork::new(
        Architecture::new(cfg.filterbank.num_bins, cfg.detector.frames),
        &mut rng,
    )?)
}

pub fn training_config(cfg: &RunConfig) -> TrainingConfig {
    let t = &cfg.training;
    TrainingConfig {
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        dropout: t.dropout,
        seed: cfg.seed,
        ..TrainingConfig::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub config: RunConfig,
    pub parameter_count: usize,
    pub training_examples: usize,
    pub validation_examples: usize,
    pub loss: Vec<EpochLoss>,
    pub validation: Scores,
}

pub fn cmd_train_detector(cfg: &RunConfig) -> Result<TrainingReport, CliError> {
    cfg.validate()?;
    let tc = training_config(cfg);
    tc.validate()?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let features = cfg.features();
    let synth = SyntheticConfig {
        sparsity: cfg.training.sparsity,
        noise: cfg.training.noise,
        ..SyntheticConfig::new(cfg.filterbank.num_bins, features.history)
    };
    synth.validate()?;
    let mut net = initial_network(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let train_set = generate_dataset(&mut rng, &synth, cfg.training.examples)?;
    let validation = generate_dataset(&mut rng, &synth, (cfg.training.examples / 4).max(1))?;
    if cfg.training.write_dataset {
        for (name, set) in [("train", &train_set), ("validation", &validation)] {
            for (i, ex) in set.iter().enumerate() {
                out.write(&format!("dataset/{name}-{i:06}.dsr"), &ex.to_bytes())?;
            }
        }
    }
    let loss = train(&mut net, &train_set, &validation, &features, &tc)?;
    let scores = evaluate(&net, &validation, &features, cfg.detector.threshold)?;
    let mut csv = String::from("epoch,train,validation\n");
    for e in &loss {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.train, e.validation);
    }
    out.write("detector.dnc", &net.to_bytes())?;
    out.write("loss.csv", csv.as_bytes())?;
    let report = TrainingReport {
        config: cfg.clone(),
        parameter_count: net.parameter_count(),
        training_examples: train_set.len(),
        validation_examples: validation.len(),
        loss,
        validation: scores,
    };
    out.write_json("training_report.json", &report)?;
    out.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub config: RunConfig,
    pub samples: usize,
    pub sample_rate: u32,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateReport, CliError> {
    cfg.validate()?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let signals = simulate_signals(cfg)?;
    let sample_rate = signals.sample_rate.round() as u32;
    for (name, samples) in [("excitation.wav", &signals.excitation), ("measurement.wav", &signals.measurement)] {
        let audio = WavAudio {
            sample_rate,
            samples: samples.clone(),
        };
        out.write(name, &encode_wav(&audio, WavEncoding::Float32)?)?;
    }
    let report = SimulateReport {
        config: cfg.clone(),
        samples: signals.excitation.len(),
        sample_rate,
    };
    out.write_json("simulate_report.json", &report)?;
    out.finish()?;
    Ok(report)
}
