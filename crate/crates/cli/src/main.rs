//! `contactloc`: dataset synthesis, training, evaluation, single-event
//! localization and haptic mapping.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 internal invariant violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contactloc::audio_io::AudioError;
use contactloc::localize::{LocalizeError, Modalities};
use contactloc::mapping::MappingError;
use contactloc::proprio::ProprioError;
use contactloc::simulate::SimError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::IoFailure { .. } | AudioError::Proprio(ProprioError::Io { .. }) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io { .. } => CliError::Io(e.to_string()),
            SimError::Audio(a) => a.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LocalizeError> for CliError {
    fn from(e: LocalizeError) -> Self {
        match e {
            LocalizeError::Io { .. } => CliError::Io(e.to_string()),
            LocalizeError::Diverged(_) | LocalizeError::ShapeMismatch(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::Sim(s) => s.into(),
            MappingError::Localize(l) => l.into(),
            MappingError::Geometry(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "contactloc", version, about = "Contact localization on a vibration-sensing tube")]
struct Cli {
    /// TOML run configuration; unspecified keys keep their defaults.
    #[arg(long, global = true, env = "CONTACTLOC_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labeled dataset: train and four test splits.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a regressor on a dataset's train split.
    Train {
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated subset of mel, gcc, proprio.
        #[arg(long)]
        modalities: Option<Modalities>,
    },
    /// Evaluate a checkpoint on a manifest or on every test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A manifest file, or a dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Restrict the model's inputs; absent modalities are zeroed.
        #[arg(long)]
        modalities: Option<Modalities>,
        /// Directory for report.txt and per_event.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localize one recording; prints `z_cm theta_deg`.
    Locate {
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        wav: PathBuf,
        /// Proprioception CSV recorded with the clip.
        #[arg(long)]
        proprio: Option<PathBuf>,
        #[command(flatten)]
        baseline: BaselineArg,
    },
    /// Map the configured branch scene with planned strikes.
    Map {
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// TOML file describing the scene (replaces `mapping.scene`).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Peak amplitude below which events are discarded.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        baseline: BaselineArg,
    },
}

#[derive(Debug, Clone, Args)]
struct BaselineArg {
    /// Use an analytical localizer instead of a checkpoint.
    #[arg(long, value_parser = ["tdoa"])]
    baseline: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Simulate { out, n_train, n_test } => {
            if let Some(n) = n_train {
                cfg.dataset.n_train = n;
            }
            if let Some(n) = n_test {
                cfg.dataset.n_test = n;
            }
            commands::simulate(&cfg.resolve()?, &out)
        }
        Command::Train { data, out, epochs, modalities } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
                cfg.train.lr_step_epochs = cfg.train.lr_step_epochs.min(e.max(1));
            }
            if let Some(m) = modalities {
                cfg.train.modalities = m;
            }
            commands::train(&cfg.resolve()?, &data, &out)
        }
        Command::Eval { checkpoint, data, modalities, out } => commands::eval(&cfg.resolve()?, &checkpoint, &data, modalities, out.as_deref()),
        Command::Locate { checkpoint, wav, proprio, baseline } => {
            commands::locate(&cfg.resolve()?, checkpoint.as_deref(), &wav, proprio.as_deref(), baseline.baseline.is_some())
        }
        Command::Map { checkpoint, scene, out, threshold, baseline } => {
            if let Some(p) = scene {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                cfg.mapping.scene = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            }
            if threshold.is_some() {
                cfg.mapping.threshold = threshold;
            }
            commands::map(&cfg.resolve()?, checkpoint.as_deref(), &out, baseline.baseline.is_some())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
