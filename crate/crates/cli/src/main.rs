use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subid::commands::{cmd_identify, cmd_simulate, cmd_train_detector};
use subid::config::{load, Preset, RunConfig};
use subid::error::CliError;

#[derive(Parser)]
#[command(name = "subid", version, about = "Subband identification of nonlinear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify a system and write the residual, traces, maps and report.
    Identify(RunArgs),
    /// Train the dependency detector on synthetic subband data.
    TrainDetector(RunArgs),
    /// Write an excitation/measurement WAV pair for a preset.
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Detector checkpoint; selects the network detector.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    excitation: Option<PathBuf>,
    #[arg(long)]
    measurement: Option<PathBuf>,
    /// Extra overrides such as `lattice.stages=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn quoted(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut set = Vec::new();
        if let Some(s) = self.seed {
            set.push(format!("seed={s}"));
        }
        if let Some(p) = &self.out {
            set.push(format!("output_dir={}", quoted(p)));
        }
        if let Some(p) = &self.checkpoint {
            set.push("detector.kind=\"network\"".into());
            set.push(format!("detector.checkpoint={}", quoted(p)));
        }
        if let Some(p) = &self.excitation {
            set.push(format!("signal.excitation_wav={}", quoted(p)));
        }
        if let Some(p) = &self.measurement {
            set.push(format!("signal.measurement_wav={}", quoted(p)));
        }
        set.extend(self.set.iter().cloned());
        load(self.config.as_deref(), self.preset, &set)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Identify(a) => {
            let cfg = a.resolve()?;
            let r = cmd_identify(&cfg)?;
            println!(
                "delta {:.2} dB (ERLE {:.2} dB), {} map refreshes, {} promotions -> {}",
                r.delta_db,
                r.erle_db,
                r.map_refreshes,
                r.promotions,
                cfg.output_dir.display()
            );
        }
        Command::TrainDetector(a) => {
            let cfg = a.resolve()?;
            let r = cmd_train_detector(&cfg)?;
            let last = r.loss.last().expect("loss curve has the initial entry");
            println!(
                "{} parameters, validation BCE {:.4}, F1 {:.3} -> {}",
                r.parameter_count,
                last.validation,
                r.validation.f1,
                cfg.output_dir.display()
            );
        }
        Command::Simulate(a) => {
            let cfg = a.resolve()?;
            let r = cmd_simulate(&cfg)?;
            println!("{} samples at {} Hz -> {}", r.samples, r.sample_rate, cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
