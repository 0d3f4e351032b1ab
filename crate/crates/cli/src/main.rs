//! `memnet` command-line tool.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use output::{Outputs, RunManifest, MANIFEST};

#[derive(Parser, Debug)]
#[command(name = "memnet", version, about = "Simulate and analyse threshold-memristor networks")]
struct Cli {
    /// Output directory
    #[arg(long, global = true, env = "MEMNET_OUT", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Series resistor + memristor under cosine drive at several frequencies
    Benchmark(BenchmarkArgs),
    /// The 27-node cube reservoir with three sine inputs, plus dissimilarity analysis
    Cube(CubeArgs),
    /// Simulate an arbitrary network file under a drive file
    Simulate(SimulateArgs),
    /// Sawtooth-versus-square classification with a trained linear readout
    Readout(ReadoutArgs),
    /// Check a network file (and optionally a drive file) without simulating
    Validate(ValidateArgs),
    /// Re-run the command recorded in a manifest and compare output hashes
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    /// Drive frequencies in Hz
    #[arg(long, value_delimiter = ',', default_value = "0.2,1,5")]
    pub frequencies: Vec<f64>,
    /// Drive amplitude in volts
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    /// Time step in seconds
    #[arg(long, default_value_t = 0.006)]
    pub dt: f64,
    /// Simulated time per frequency in seconds
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
    /// Frequencies simulated in parallel
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write gnuplot scripts for the overlay and loop files
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcludeDc {
    /// Drop the zero-frequency bin for resistance series only
    Resistances,
    /// Drop it for every output
    All,
    /// Keep it everywhere
    None,
}

impl ExcludeDc {
    pub fn voltages(self) -> bool {
        self == ExcludeDc::All
    }

    pub fn resistances(self) -> bool {
        self != ExcludeDc::None
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CubeArgs {
    /// Time step in seconds
    #[arg(long, default_value_t = 0.006)]
    pub dt: f64,
    /// Number of steps; the trace has steps + 1 samples and the spectra use the first `steps`
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = ExcludeDc::Resistances)]
    pub exclude_dc: ExcludeDc,
    /// Voltage outputs count as indistinguishable from their fit when every δ is at most this
    #[arg(long, default_value_t = 0.1)]
    pub voltage_threshold: f64,
    /// Also write a gnuplot script for the panel files
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Network file (TOML)
    pub network: PathBuf,
    /// Drive file (TOML)
    pub drives: PathBuf,
    #[arg(long, default_value_t = 0.006)]
    pub dt: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Compute spectra and dissimilarity of every internal voltage and resistance
    #[arg(long)]
    pub analyze: bool,
    #[arg(long, value_enum, default_value_t = ExcludeDc::Resistances)]
    pub exclude_dc: ExcludeDc,
    /// Voltage outputs count as indistinguishable from their fit when every δ is at most this
    #[arg(long, default_value_t = 0.1)]
    pub voltage_threshold: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableSet {
    Voltages,
    Resistances,
    Both,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutArgs {
    /// Network file; the built-in cube when omitted
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Episodes simulated in parallel
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    #[arg(long, value_enum, default_value_t = ObservableSet::Voltages)]
    pub observables: ObservableSet,
    /// Sampling instants per episode
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.006)]
    pub dt: f64,
    /// Episode length in seconds
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub frequency: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Permute labels after simulation (chance-level control)
    #[arg(long)]
    pub shuffle_labels: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ValidateArgs {
    pub network: PathBuf,
    #[arg(long)]
    pub drives: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// A message and the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const USAGE: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const NUMERICAL: u8 = 3;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<memnet::Error> for Failure {
    fn from(e: memnet::Error) -> Self {
        use memnet::Error as E;
        let code = match &e {
            E::Parse { .. } | E::Config(_) | E::Io(_) => USAGE,
            E::InvalidNetwork(_)
            | E::MissingDrive(_)
            | E::UnexpectedDrive(_)
            | E::MissingBoundary(_)
            | E::Task(_)
            | E::Dimension(_)
            | E::SpectrumMismatch(_) => VALIDATION,
            E::SingularSystem | E::NonConvergence { .. } | E::KclViolation { .. } | E::Step { .. } | E::ZeroOutput => {
                NUMERICAL
            }
        };
        Failure::new(code, e.to_string())
    }
}

/// What a command produced, before anything touches the disk.
pub struct Run {
    /// The command with input paths made absolute.
    pub command: Command,
    pub inputs: std::collections::BTreeMap<String, String>,
    pub outputs: Outputs,
    pub summary: Vec<String>,
}

fn finish(run: Run, out: &std::path::Path, started: Instant) -> Result<Vec<String>, Failure> {
    let Run {
        command,
        inputs,
        mut outputs,
        summary,
    } = run;
    let hashes = outputs.hashes();
    let manifest = RunManifest::new(command, inputs, hashes, started.elapsed().as_secs_f64());
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    outputs.add(MANIFEST, json + "\n");
    outputs
        .commit(out)
        .map_err(|e| Failure::new(USAGE, format!("cannot write outputs to {}: {e}", out.display())))?;
    Ok(summary)
}

fn dispatch(cli: Cli) -> Result<Vec<String>, Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Validate(args) => commands::validate(&args),
        Command::Replay(args) => {
            let (run, expected) = commands::replay(&args)?;
            let actual = run.outputs.hashes();
            let diverged: Vec<&String> = actual
                .keys()
                .chain(expected.keys())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .filter(|name| actual.get(*name) != expected.get(*name))
                .collect();
            let diverged: Vec<String> = diverged.into_iter().cloned().collect();
            let mut summary = finish(run, &cli.out, started)?;
            if !diverged.is_empty() {
                return Err(Failure::new(
                    NUMERICAL,
                    format!("replay differs from the manifest in: {}", diverged.join(", ")),
                ));
            }
            summary.push("replay matches the manifest output hashes".into());
            Ok(summary)
        }
        command => {
            let run = commands::execute(command)?;
            finish(run, &cli.out, started)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
