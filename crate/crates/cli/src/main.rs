mod commands;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use superatom_core::params::ConfigEntries;

/// Cavity-superatom simulator: spectra, Rabi traces, single-shot detection,
/// readout optimisation and blockade statistics.
#[derive(Debug, Parser)]
#[command(name = "superatom-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Cavity transmission, reflectivity and phase versus probe detuning.
    Spectra(SpectraArgs),
    /// Simulated Rabi trace with finite-shot noise and its fit.
    Rabi(RabiArgs),
    /// Simulated single-shot histograms, model overlay, fit and error rates.
    Detect(DetectArgs),
    /// Fidelity over a grid of integration times and thresholds.
    Optimize(OptimizeArgs),
    /// Sampled cloud and pair-shift statistics.
    Ensemble(EnsembleArgs),
    /// Re-runs a previous invocation from its manifest.json.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// Parameter file (`key = value`); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpectraArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lower end of the probe detuning sweep (MHz).
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    pub delta_min: f64,
    /// Upper end of the probe detuning sweep (MHz).
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub delta_max: f64,
    /// Number of detuning points.
    #[arg(long, default_value_t = 801)]
    pub points: usize,
    /// Full blockade: control field removed (Ω_c = 0).
    #[arg(long)]
    pub blocked: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RabiArgs {
    #[command(flatten)]
    pub common: Common,
    /// First drive duration (µs).
    #[arg(long, default_value_t = 0.0)]
    pub t_min: f64,
    /// Last drive duration (µs).
    #[arg(long, default_value_t = 3.0)]
    pub t_max: f64,
    /// Number of drive durations.
    #[arg(long, default_value_t = 61)]
    pub points: usize,
    /// Readouts per drive duration.
    #[arg(long, default_value_t = 200)]
    pub shots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Counting,
    Homodyne,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Shots per preparation (with and without π pulse); at least 100.
    #[arg(long, default_value_t = 400)]
    pub shots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxArg {
    /// Flux fixed at the configured value.
    Fixed,
    /// Flux scaled so that t_i·φ stays at the configured value.
    ConstantCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeArg {
    Fixed,
    /// τ_R inversely proportional to the flux.
    InverseFlux,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Integration time grid (µs): first, last, step.
    #[arg(long, default_value_t = 4.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 24.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_step: f64,
    /// Threshold grid; defaults to 1..12 counts or X from −1 to 2 in 0.01.
    #[arg(long, allow_hyphen_values = true)]
    pub thr_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub thr_max: Option<f64>,
    #[arg(long)]
    pub thr_step: Option<f64>,
    #[arg(long, value_enum, default_value_t = FluxArg::Fixed)]
    pub flux: FluxArg,
    #[arg(long, value_enum, default_value_t = LifetimeArg::Fixed)]
    pub lifetime: LifetimeArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Radius for the neighbour count (µm).
    #[arg(long, default_value_t = 2.8)]
    pub r_neighbors: f64,
    /// Reference distance for the blockade threshold C6/r⁶ (µm); 4σ when omitted.
    #[arg(long)]
    pub r_ref: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; the manifest's own directory when omitted.
    #[arg(long = "out")]
    pub into: Option<PathBuf>,
}

/// Usage-level failure: bad flags or flag combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    subcommand: String,
    command: Command,
    /// Config entries as read, in config units; replay uses these.
    config_entries: BTreeMap<String, f64>,
    /// Every system parameter after defaults are applied.
    resolved_parameters: BTreeMap<String, f64>,
    seed: u64,
    outputs: Vec<String>,
    version: String,
    duration_s: f64,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectra(_) => "spectra",
            Command::Rabi(_) => "rabi",
            Command::Detect(_) => "detect",
            Command::Optimize(_) => "optimize",
            Command::Ensemble(_) => "ensemble",
            Command::Replay(_) => "replay",
        }
    }

    fn common(&self) -> Option<&Common> {
        match self {
            Command::Spectra(a) => Some(&a.common),
            Command::Rabi(a) => Some(&a.common),
            Command::Detect(a) => Some(&a.common),
            Command::Optimize(a) => Some(&a.common),
            Command::Ensemble(a) => Some(&a.common),
            Command::Replay(_) => None,
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SUPERATOM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| usage(format!("SUPERATOM_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn execute(command: &Command, entries: &ConfigEntries, out: &Path) -> Result<()> {
    let started = Instant::now();
    let common = command.common().expect("runnable command");
    let outputs = commands::run(command, entries, common.seed)?;
    let params = superatom_core::SystemParams::from_entries(entries)?;
    let manifest = Manifest {
        subcommand: command.name().to_string(),
        command: command.clone(),
        config_entries: entries.to_map(),
        resolved_parameters: params.to_entries(),
        seed: common.seed,
        outputs: outputs.iter().map(|o| o.name.clone()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_s: started.elapsed().as_secs_f64(),
    };
    output::write_all(out, &outputs)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    output::write_atomic(out, "manifest.json", &text)?;
    println!(
        "{}",
        json!({"subcommand": manifest.subcommand, "out": out.display().to_string(), "outputs": manifest.outputs})
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Replay(r) => {
            let text = std::fs::read_to_string(&r.manifest)
                .with_context(|| format!("cannot read {}", r.manifest.display()))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| usage(format!("{} is not a run manifest: {e}", r.manifest.display())))?;
            if matches!(m.command, Command::Replay(_)) {
                bail!(usage("a manifest cannot replay a replay"));
            }
            let entries = ConfigEntries::from_map(&m.config_entries)?;
            let out = match r.into {
                Some(d) => d,
                None => r
                    .manifest
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from(".")),
            };
            execute(&m.command, &entries, &out)
        }
        command => {
            let common = command.common().expect("runnable command");
            let entries = match &common.config {
                Some(path) => ConfigEntries::read(path)?,
                None => ConfigEntries::default(),
            };
            execute(&command, &entries, &common.out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<superatom_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(superatom_core::Error::Io { .. }) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
