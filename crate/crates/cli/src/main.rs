//! Command-line entry point for the HOI image diffusion pipeline.
//!
//! Subcommands: `gen` (synthetic benchmark), `train`, `eval`, `diag`
//! (forward-process statistical checks), `export-trajectory` (per-step
//! reverse-process images). Exit codes: 0 success, 1 runtime failure,
//! 2 configuration or usage error.

mod commands;
mod config;
mod interrupt;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hoi-idiff", version, about = "HOI image diffusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Plain-text key-value config file (section-prefixed keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set world.h=6. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Ablation shorthand: gaussian-process, uniform-init, local-patch,
    /// horizontal-only, vertical-only. Repeatable.
    #[arg(long = "ablation", value_name = "NAME")]
    ablation: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<config::RunConfig> {
        let mut cfg = config::RunConfig::load(self.config.as_deref(), &self.set)?;
        for a in &self.ablation {
            cfg.apply_ablation(a)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for train.jsonl, test.jsonl and header.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on a generated dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint, log and schedule.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint; ignored with --ideal-oracle.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bypass the model and score ground-truth images (validates the
        /// metric path end to end; expect mAP = 1).
        #[arg(long)]
        ideal_oracle: bool,
    },
    /// Run the forward-process statistical diagnostics.
    Diag {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Optional directory for the diagnostics report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-step reverse-process images for one pair.
    ExportTrajectory {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pair id to export.
        #[arg(long)]
        pair: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

type Runner<'a> = Box<dyn FnOnce(&config::RunConfig) -> anyhow::Result<ExitCode> + 'a>;

fn main() -> ExitCode {
    interrupt::install();
    let cli = Cli::parse();
    let (cfg_args, runner): (&ConfigArgs, Runner) = match &cli.command {
            Command::Gen { cfg, out } => (cfg, Box::new(move |c| commands::gen::run(c, out))),
            Command::Train { cfg, data, out } => {
                (cfg, Box::new(move |c| commands::train::run(c, data, out)))
            }
            Command::Eval {
                cfg,
                checkpoint,
                data,
                out,
                ideal_oracle,
            } => (
                cfg,
                Box::new(move |c| commands::eval::run(c, checkpoint.as_deref(), data, out, *ideal_oracle)),
            ),
            Command::Diag { cfg, out } => (cfg, Box::new(move |c| commands::diag::run(c, out.as_deref()))),
            Command::ExportTrajectory {
                cfg,
                checkpoint,
                data,
                pair,
                out,
            } => (
                cfg,
                Box::new(move |c| commands::export::run(c, checkpoint, data, *pair, out)),
            ),
        };

    let resolved = match cfg_args.resolve() {
        Ok(c) => c,
        Err(err) => {
            eprintln!("config error: {err:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match runner(&resolved) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

/// Invalid configuration surfaced after parsing (e.g. world.h = 0 reaching
/// dataset generation) still exits 2; genuine runtime failures exit 1.
fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<hoi_idiff_core::Error>(),
            Some(
                hoi_idiff_core::Error::Config(_)
                    | hoi_idiff_core::Error::InvalidRange(_)
                    | hoi_idiff_core::Error::DimensionMismatch(_)
            )
        )
    })
}
