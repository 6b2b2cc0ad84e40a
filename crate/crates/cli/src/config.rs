//! Run configuration: preset defaults, merged with a TOML file, then `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subid_core::dependency::{CoherenceConfig, FeatureConfig, InputLayout};
use subid_core::filterbank::FilterbankConfig;
use subid_core::lattice::{GainPairing, LatticeConfig};
use subid_core::systems::BoucWenParams;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Bouc-Wen hysteresis followed by a reverberant channel.
    Hysteresis,
    /// Quadrature amplitude modulation `x[n] sin(pi n / 2)`.
    Modulation,
    /// Measurement equals excitation.
    Identity,
    /// Excitation and measurement read from WAV files.
    WavPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Coherence,
    Network,
    /// Keep the initial one-to-one map.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub sample_rate: f64,
    pub duration_s: f64,
    /// Low-pass cutoff of the noise excitation as a fraction of Nyquist.
    pub excitation_cutoff: f64,
    pub excitation_std: f64,
    pub rt60_ms: f64,
    pub bouc_wen: BoucWenParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation_wav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_wav: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Network time length `L`.
    pub frames: usize,
    /// Frames of history handed to the detector at each refresh.
    pub history: usize,
    pub threshold: f64,
    /// Frames between map refreshes.
    pub refresh_frames: usize,
    pub coherence: CoherenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub examples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub sparsity: f64,
    pub noise: f64,
    /// Also write every generated example as a record under `dataset/`.
    pub write_dataset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub skip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub enforce_analyticity: bool,
    pub signal: SignalConfig,
    pub filterbank: FilterbankConfig,
    pub lattice: LatticeConfig,
    pub detector: DetectorSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (nw, nh, stages) = match preset {
            Preset::Hysteresis | Preset::WavPair => (256, 128, 15),
            Preset::Modulation => (64, 16, 15),
            Preset::Identity => (64, 32, 4),
        };
        let filterbank = FilterbankConfig::new(nw, nh).expect("preset filterbank is valid");
        let mut lattice = LatticeConfig::new(filterbank.num_bins, stages);
        lattice.pairing = GainPairing::Conventional;
        lattice.layout = InputLayout::TwoSided;
        let (duration_s, cutoff, std, transition) = match preset {
            Preset::Hysteresis | Preset::WavPair => (20.0, 0.5, 0.3, 1.0),
            Preset::Modulation => (10.0, 1.0, 1.0, 0.9999),
            Preset::Identity => (5.0, 1.0, 0.5, 1.0),
        };
        lattice.transition = transition;
        let features = FeatureConfig::default();
        Self {
            preset,
            seed: 1,
            output_dir: PathBuf::from(format!("runs/{}", preset_name(preset))),
            enforce_analyticity: false,
            signal: SignalConfig {
                sample_rate: 16_000.0,
                duration_s,
                excitation_cutoff: cutoff,
                excitation_std: std,
                rt60_ms: 200.0,
                bouc_wen: BoucWenParams::default(),
                excitation_wav: None,
                measurement_wav: None,
            },
            filterbank,
            lattice,
            detector: DetectorSection {
                kind: if preset == Preset::Identity {
                    DetectorKind::None
                } else {
                    DetectorKind::Coherence
                },
                checkpoint: None,
                frames: features.frames,
                history: features.history,
                threshold: 0.5,
                refresh_frames: 100,
                coherence: CoherenceConfig::default(),
            },
            training: TrainingSection {
                examples: 5000,
                epochs: 10,
                batch_size: 32,
                learning_rate: 1e-5,
                dropout: 0.1,
                sparsity: 0.3,
                noise: 0.1,
                write_dataset: false,
            },
            evaluation: EvaluationSection {
                skip_fraction: subid_core::metrics::DEFAULT_SKIP_FRACTION,
            },
        }
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            frames: self.detector.frames,
            history: self.detector.history,
        }
    }

    /// Parameter and cross-module consistency checks.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: subid_core::Error| CliError::Config(e.to_string());
        self.filterbank.validate().map_err(cfg)?;
        self.lattice.validate().map_err(cfg)?;
        self.features().validate().map_err(cfg)?;
        if self.lattice.num_bins != self.filterbank.num_bins {
            return Err(CliError::Config(format!(
                "lattice.num_bins {} differs from filterbank.num_bins {}",
                self.lattice.num_bins, self.filterbank.num_bins
            )));
        }
        let s = &self.signal;
        if !(s.sample_rate > 0.0) || !(s.duration_s > 0.0) || !(s.rt60_ms > 0.0) {
            return Err(CliError::Config("sample rate, duration and rt60 must be positive".into()));
        }
        if !(s.excitation_cutoff > 0.0 && s.excitation_cutoff <= 1.0) || !(s.excitation_std > 0.0) {
            return Err(CliError::Config("excitation cutoff must be in (0, 1] and std positive".into()));
        }
        if self.preset == Preset::WavPair && (s.excitation_wav.is_none() || s.measurement_wav.is_none()) {
            return Err(CliError::Config(
                "preset wav-pair needs signal.excitation_wav and signal.measurement_wav".into(),
            ));
        }
        let d = &self.detector;
        if !(0.0..=1.0).contains(&d.threshold) {
            return Err(CliError::Config("detector.threshold must be in [0, 1]".into()));
        }
        if d.kind == DetectorKind::Network && d.checkpoint.is_none() {
            return Err(CliError::Config("detector.kind = network needs detector.checkpoint".into()));
        }
        if d.kind != DetectorKind::None && d.refresh_frames == 0 {
            return Err(CliError::Config("detector.refresh_frames must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.evaluation.skip_fraction) {
            return Err(CliError::Config("evaluation.skip_fraction must be in [0, 1)".into()));
        }
        let t = &self.training;
        if t.examples == 0 {
            return Err(CliError::Config("training.examples must be positive".into()));
        }
        Ok(())
    }
}

pub fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Hysteresis => "hysteresis",
        Preset::Modulation => "modulation",
        Preset::Identity => "identity",
        Preset::WavPair => "wav-pair",
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as TOML, falling back to a string.
fn override_value(spec: &str) -> Result<toml::Value, CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut v = value;
    for part in key.rsplit('.') {
        let mut t = toml::Table::new();
        t.insert(part.to_string(), v);
        v = toml::Value::Table(t);
    }
    Ok(v)
}

/// Resolves the configuration text. `preset` takes precedence over the file's own preset.
pub fn resolve(text: Option<&str>, preset: Option<Preset>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let file: toml::Value = match text {
        Some(t) => toml::Value::Table(t.parse::<toml::Table>().map_err(|e| CliError::Config(e.to_string()))?),
        None => toml::Value::Table(toml::Table::new()),
    };
    let mut over: Vec<toml::Value> = overrides.iter().map(|s| override_value(s)).collect::<Result<_, _>>()?;
    let preset_of = |v: &toml::Value| -> Result<Option<Preset>, CliError> {
        match v.get("preset") {
            Some(p) => p.clone().try_into().map(Some).map_err(|e: toml::de::Error| CliError::Config(e.to_string())),
            None => Ok(None),
        }
    };
    let mut chosen = preset_of(&file)?;
    for o in &over {
        if let Some(p) = preset_of(o)? {
            chosen = Some(p);
        }
    }
    let chosen = preset.or(chosen).unwrap_or(Preset::Hysteresis);
    let given = |section: &str| {
        std::iter::once(&file)
            .chain(&over)
            .any(|v| v.get(section).and_then(|t| t.get("num_bins")).is_some())
    };
    let (fb_bins, lattice_bins) = (given("filterbank"), given("lattice"));
    let mut merged = toml::Value::try_from(RunConfig::preset(chosen)).map_err(|e| CliError::Config(e.to_string()))?;
    merge(&mut merged, file);
    for o in over.drain(..) {
        merge(&mut merged, o);
    }
    // bin counts follow the window size unless set explicitly
    let window = merged.get("filterbank").and_then(|f| f.get("window_size")).and_then(toml::Value::as_integer);
    if let (Some(nw), toml::Value::Table(t)) = (window, &mut merged) {
        let fb_value = t
            .get("filterbank")
            .and_then(|f| f.get("num_bins"))
            .cloned()
            .filter(|_| fb_bins)
            .unwrap_or(toml::Value::Integer(nw / 2));
        for (section, explicit) in [("filterbank", fb_bins), ("lattice", lattice_bins)] {
            if !explicit {
                if let Some(toml::Value::Table(sec)) = t.get_mut(section) {
                    sec.insert("num_bins".into(), fb_value.clone());
                }
            }
        }
    }
    if let toml::Value::Table(t) = &mut merged {
        t.insert("preset".into(), toml::Value::String(preset_name(chosen).into()));
    }
    let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    resolve(text.as_deref(), preset, overrides)
}
