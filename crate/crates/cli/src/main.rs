mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spectravoc_core::{AblationMode, Error, ProjectConfig, Result};

#[derive(Debug, Parser)]
#[command(name = "spectravoc", version, about = "Excitation-driven spectral neural vocoder")]
struct Cli {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `train.seed`; also seeds synthesis excitation noise.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `train.ablation_mode`.
    #[arg(long, global = true, value_enum)]
    ablation: Option<Ablation>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    Full,
    Noise,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cache frame-aligned F0 and log-mel features for every WAV in a directory.
    Prepare {
        #[arg(long)]
        wav_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train on prepared features, resuming from the newest checkpoint.
    Train {
        /// Total step count to reach; defaults to `train.max_steps`.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Ignore existing checkpoints and start from fresh parameters.
        #[arg(long)]
        fresh: bool,
    },
    /// Resynthesize one utterance from a checkpoint.
    Synth {
        /// Checkpoint file or checkpoint directory holding `latest`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature file from `prepare`, or a WAV file to analyze.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `natural`, `predicted`, or a path to an F0 text file.
        #[arg(long, default_value = "natural")]
        f0: String,
    },
    /// Analysis-synthesis metrics over a directory of reference WAVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// `natural` or `predicted`.
        #[arg(long, default_value = "natural")]
        f0: String,
    },
    /// Write the excitation waveform for an F0 text file.
    Excite {
        #[arg(long)]
        f0: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render its amplitude spectrogram.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Render the amplitude spectrogram of a WAV file as PNG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration as TOML.
    DumpConfig {
        /// Start from the small single-core preset instead of the defaults.
        #[arg(long)]
        desk: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ProjectConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ProjectConfig::from_toml(&text)?
        }
        None if matches!(cli.command, Command::DumpConfig { desk: true }) => ProjectConfig::desk(),
        None => ProjectConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(a) = cli.ablation {
        cfg.train.ablation_mode = match a {
            Ablation::Full => AblationMode::FullExcitation,
            Ablation::Noise => AblationMode::NoiseOnly,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Prepare { wav_dir, out_dir } => commands::prepare(&cfg, wav_dir, out_dir),
        Command::Train { max_steps, fresh } => commands::train(cfg, max_steps, fresh),
        Command::Synth {
            checkpoint,
            input,
            out,
            f0,
        } => commands::synth(&cfg, &checkpoint, &input, &out, &f0),
        Command::Eval {
            checkpoint,
            test_dir,
            out_dir,
            f0,
        } => commands::eval(&cfg, &checkpoint, &test_dir, &out_dir, &f0),
        Command::Excite { f0, out, plot } => commands::excite(&cfg, &f0, &out, plot.as_deref()),
        Command::Plot { input, out } => commands::plot(&cfg, &input, &out),
        Command::DumpConfig { .. } => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
