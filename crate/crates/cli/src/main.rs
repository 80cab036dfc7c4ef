//! `seismo` — pipeline driver for balanced failure-mode dataset synthesis.
//!
//! Subcommands map one-to-one onto pipeline stages; a single TOML config
//! drives them all, stages exchange only files under the output
//! directory, and every stage appends content hashes to an append-only
//! manifest so reruns are verifiably byte-identical.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seismo_core::error::Error as CoreError;

mod artifacts;
mod config;
mod stages;

use artifacts::Workspace;
use config::PipelineConfig;

// ── Errors and exit codes ───────────────────────────────────────────────

/// Driver-level failure classification.
///
/// Exit codes: 0 success, 2 configuration or input error, 3 missing
/// upstream artifact, 4 numerical failure inside a stage.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact { artifact: String, command: String },
    Core(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::Integration { .. }
                | CoreError::Conditioning(_)
                | CoreError::ConstantTarget
                | CoreError::TrainingDiverged { .. }
                | CoreError::ModeAcceptance { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::MissingArtifact { artifact, command } => write!(
                f,
                "missing artifact `{artifact}`: run `seismo {command}` first"
            ),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

// ── Command line ────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "seismo",
    version,
    about = "Synthesize balanced failure-mode training datasets for structures under seismic excitation"
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "configs/desk.toml")]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker-thread cap (0 = library default).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize ground motions and select a spectrum-compatible set.
    GenGm,
    /// Extract the feature catalog for every selected motion.
    ExtractGmf,
    /// Run the Monte Carlo simulations (the imbalanced dataset).
    Mcs,
    /// Search feature subsets and pick the critical set.
    SelectFeatures,
    /// Active-learning surrogates, ball classification, mode densities.
    IdentifyModes,
    /// Assemble the balanced dataset via scale reconstruction.
    Reconstruct,
    /// Train the balanced and imbalanced classifiers.
    TrainDnn,
    /// Cross-evaluate the classifiers and write the summary report.
    Report,
    /// Run every stage in order.
    RunAll,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    seismo_core::par::configure_threads(config.jobs);
    let ws = Workspace::new(&config.out_dir)?;
    match cli.command {
        Command::GenGm => stages::gen_gm(&config, &ws),
        Command::ExtractGmf => stages::extract_gmf(&config, &ws),
        Command::Mcs => stages::mcs(&config, &ws),
        Command::SelectFeatures => stages::select_features(&config, &ws),
        Command::IdentifyModes => stages::identify_modes(&config, &ws),
        Command::Reconstruct => stages::reconstruct_stage(&config, &ws),
        Command::TrainDnn => stages::train_dnn(&config, &ws),
        Command::Report => stages::report(&config, &ws),
        Command::RunAll => stages::run_all(&config, &ws),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
