use std::fs;
use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subid::commands::*;
use subid::config::{resolve, Preset, RunConfig};
use subid::error::CliError;
use subid_core::dependency::DetectorNetwork;
use subid_core::systems::{band_limited_noise, synth_reverb_ir};

fn config(preset: Preset, dir: &Path, overrides: &[&str]) -> RunConfig {
    let mut set: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    set.push(format!("output_dir = {:?}", dir.display().to_string()));
    resolve(None, Some(preset), &set).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn identity_system_is_identified() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_identify(&config(Preset::Identity, dir.path(), &["signal.duration_s = 2.0"])).unwrap();
    assert!(r.delta_db <= -40.0, "{}", r.delta_db);
    for f in ["residual.wav", "error_trace.csv", "dependency_map.csv", "dependency_heatmap.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn identify_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Preset::Modulation, dir.path(), &["signal.duration_s = 1.0", "detector.coherence.history = 64"]);
    cmd_identify(&cfg).unwrap();
    let first = read_all(dir.path());
    cmd_identify(&cfg).unwrap();
    assert_eq!(first, read_all(dir.path()));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["preset"], "modulation");
    assert_eq!(report["config"]["lattice"]["stages"], 15);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_simulate(&config(Preset::Modulation, a.path(), &["signal.duration_s = 0.5"])).unwrap();
    cmd_simulate(&config(Preset::Modulation, b.path(), &["signal.duration_s = 0.5"])).unwrap();
    for f in ["excitation.wav", "measurement.wav"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn linear_hysteresis_is_a_reverberant_copy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        Preset::Hysteresis,
        dir.path(),
        &["signal.duration_s = 0.25", "signal.bouc_wen = { alpha = 0.0, beta = 0.0, zeta = 0.0, mu = 0.7 }"],
    );
    let s = simulate_signals(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = band_limited_noise(4000, 0.5, 0.3, &mut rng).unwrap();
    let ir = synth_reverb_ir(200.0, 16_000.0, &mut rng).unwrap();
    assert_eq!(s.excitation, x);
    for n in 0..x.len() {
        let want: f64 = (0..=n.min(ir.len() - 1)).map(|j| ir[j] * 0.7 * x[n - j]).sum();
        assert!((s.measurement[n] - want).abs() < 1e-9, "sample {n}");
    }
}

#[test]
fn wav_pair_round_trip_matches_in_memory_run() {
    let sim = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    let base = ["signal.duration_s = 1.0", "detector.kind = \"none\""];
    cmd_simulate(&config(Preset::Modulation, sim.path(), &base)).unwrap();
    let x = sim.path().join("excitation.wav").display().to_string();
    let y = sim.path().join("measurement.wav").display().to_string();
    let set = vec![
        format!("signal.excitation_wav = {x:?}"),
        format!("signal.measurement_wav = {y:?}"),
        "filterbank.window_size = 64".into(),
        "filterbank.hop_size = 16".into(),
        "lattice.transition = 0.9999".into(),
        "detector.kind = \"none\"".into(),
        format!("output_dir = {:?}", run.path().display().to_string()),
    ];
    let from_files = cmd_identify(&resolve(None, Some(Preset::WavPair), &set).unwrap()).unwrap();
    let direct = cmd_identify(&config(Preset::Modulation, run.path(), &base)).unwrap();
    // float32 storage perturbs the signals slightly
    assert!((from_files.delta_db - direct.delta_db).abs() < 1.0, "{} {}", from_files.delta_db, direct.delta_db);
}

#[test]
fn wav_pair_without_paths_is_a_config_error() {
    assert!(matches!(resolve(None, Some(Preset::WavPair), &[]), Err(CliError::Config(_))));
}

#[test]
fn zero_epochs_keep_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        Preset::Identity,
        dir.path(),
        &["filterbank.window_size = 16", "filterbank.hop_size = 8", "detector.frames = 8", "detector.history = 16", "training.examples = 8", "training.epochs = 0"],
    );
    let r = cmd_train_detector(&cfg).unwrap();
    assert_eq!(r.loss.len(), 1);
    let saved = DetectorNetwork::from_bytes(&fs::read(dir.path().join("detector.dnc")).unwrap()).unwrap();
    assert_eq!(saved, initial_network(&cfg).unwrap());
}

#[test]
fn small_training_run_reduces_validation_loss_deterministically() {
    let run = |dir: &Path| {
        let cfg = config(
            Preset::Identity,
            dir,
            &[
                "filterbank.window_size = 16",
                "filterbank.hop_size = 8",
                "detector.frames = 8",
                "detector.history = 32",
                "training.examples = 500",
                "training.epochs = 10",
                "training.learning_rate = 1e-3",
                "training.write_dataset = true",
            ],
        );
        cmd_train_detector(&cfg).unwrap();
        fs::read_to_string(dir.join("loss.csv")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let curve = run(a.path());
    assert_eq!(curve, run(b.path()));
    let rows: Vec<Vec<f64>> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    let (initial, last) = (rows[0][2], rows[10][2]);
    assert!(last <= 0.8 * initial, "{initial} -> {last}");
    let record = fs::read(a.path().join("dataset/train-000000.dsr")).unwrap();
    assert_eq!(subid_core::dependency::Example::from_bytes(&record).unwrap().history(), 32);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_subid");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = Command::new(bin)
        .args(["identify", "--preset", "wav-pair", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = Command::new(bin)
        .args(["identify", "--set", "lattice.stages=0", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), b"").unwrap();
    let status = Command::new(bin)
        .args(["identify", "--preset", "identity", "--set", "signal.duration_s=0.2", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    fs::remove_file(out.join(".lock")).unwrap();
    let status = Command::new(bin)
        .args(["identify", "--preset", "identity", "--set", "signal.duration_s=0.2", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let status = Command::new(bin)
        .args(["identify", "--checkpoint"])
        .arg(dir.path().join("missing.dnc"))
        .arg("-o")
        .arg(dir.path().join("net"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}
