use std::path::PathBuf;
use std::process::ExitCode;

use adenoseg::run::Override;
use adenoseg::RunConfig;
use adenoseg_cli::{cmd_evaluate, cmd_predict, cmd_train, split_overrides, Stub};
use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Tumor segmentation for histopathology regions of interest.
///
/// Any config key can be overridden with `--<section>.<key>=<value>`,
/// e.g. `--train.epochs=2`.
#[derive(Parser)]
#[command(name = "adenoseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on `data.root`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write masks and overlays for an image or a directory of images.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score predictions against a dataset with ground-truth masks.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Use a fixed predictor instead of a checkpoint.
        #[arg(long, value_enum)]
        stub: Option<StubArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StubArg {
    Identity,
    Background,
}

fn resolve(common: &Common, overrides: &[String]) -> Result<RunConfig> {
    let mut parsed = overrides.iter().map(|o| Override::parse(o)).collect::<adenoseg::Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        parsed.push(Override::parse(&format!("seed={seed}"))?);
    }
    if let Some(out) = &common.output {
        parsed.push(Override {
            path: vec!["output_dir".into()],
            value: adenoseg_toml_string(out),
        });
    }
    Ok(RunConfig::load(common.config.as_deref(), &parsed)?)
}

fn adenoseg_toml_string(path: &std::path::Path) -> adenoseg::run::TomlValue {
    adenoseg::run::TomlValue::String(path.to_string_lossy().into_owned())
}

fn run(cli: Cli, overrides: &[String]) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let cfg = resolve(&common, overrides)?;
            let summary = cmd_train(&cfg, resume.as_deref())?;
            if let Some(last) = summary.fit.records.last() {
                println!(
                    "trained {} epochs; final loss {:.4}, dice {:.4}; outputs in {}",
                    last.epoch,
                    last.mean_loss,
                    last.mean_dice,
                    summary.output_dir.display()
                );
            }
        }
        Command::Predict {
            common,
            checkpoint,
            input,
        } => {
            let cfg = resolve(&common, overrides)?;
            let summary = cmd_predict(&cfg, &checkpoint, &input)?;
            println!("wrote {} files", summary.written.len());
            if !summary.failed.is_empty() {
                for (path, err) in &summary.failed {
                    eprintln!("failed: {}: {err}", path.display());
                }
                bail!("{} input(s) failed", summary.failed.len());
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            stub,
        } => {
            let cfg = resolve(&common, overrides)?;
            let stub = stub.map(|s| match s {
                StubArg::Identity => Stub::Identity,
                StubArg::Background => Stub::Background,
            });
            let summary = cmd_evaluate(&cfg, checkpoint.as_deref(), &dataset, stub)?;
            for s in &summary.per_image {
                println!("{}\tdice {:.4}\tiou {:.4}", s.name, s.dice, s.iou);
            }
            println!("mean\tdice {:.4}\tiou {:.4}", summary.mean_dice, summary.mean_iou);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
