//! `scan`: prepare datasets, train, evaluate and predict lung/heart masks.

mod common;
mod evaluate;
mod predict;
mod prepare;
mod run;
mod settings;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use scan_core::data::DatasetChoice;
use scan_core::train::TrainMode;

use common::Subset;
use settings::{Overrides, Settings};

#[derive(Parser)]
#[command(name = "scan", version, about = "Adversarial segmentation of lung fields and heart in chest radiographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the dataset layout, write the development/evaluation split and a load report.
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a segmentor (and critic in scan mode) on the development split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        hyper: TrainArgs,
        /// Continue the run in this directory from its newest checkpoint.
        #[arg(long, value_name = "RUN_DIR")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a split, or on every image of a dataset when no split is given.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Segmentor checkpoint file, or a training run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Part of the split to score.
        #[arg(long, value_enum, default_value = "evaluation")]
        subset: Subset,
        #[arg(long)]
        no_postprocess: bool,
        /// Fail when the mean prediction time per image exceeds this many seconds.
        #[arg(long, value_name = "SECONDS")]
        latency_budget: Option<f64>,
        /// Write contour overlays for every image.
        #[arg(long)]
        overlays: bool,
    },
    /// Write per-class masks for arbitrary images.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        no_postprocess: bool,
        /// Also write a contour overlay per image.
        #[arg(long)]
        overlay: bool,
        /// Side length the images are resized to.
        #[arg(long, default_value_t = scan_core::data::DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run the gradient checks and the metric oracle.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest describing where images and masks live.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetChoice>,
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Parent directory of the run directories.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn parse_dataset(s: &str) -> Result<DatasetChoice, String> {
    s.parse().map_err(|e: scan_core::ScanError| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: scan_core::ScanError| e.to_string())
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            manifest: self.manifest.clone(),
            dataset: self.dataset,
            split_file: self.split_file.clone(),
            out_dir: self.out_dir.clone(),
            deterministic: self.deterministic,
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn settings(common: &CommonArgs, overrides: &Overrides) -> Result<Settings> {
    Settings::resolve(common.config.as_deref(), overrides)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { common } => prepare::run(&settings(&common, &common.overrides())?),
        Command::Train { common, hyper, resume } => {
            let o = Overrides {
                mode: hyper.mode,
                lambda: hyper.lambda,
                epochs: hyper.epochs,
                pretrain_epochs: hyper.pretrain_epochs,
                batch_size: hyper.batch_size,
                lr: hyper.lr,
                ..common.overrides()
            };
            train::run(&settings(&common, &o)?, &o, resume.as_deref())
        }
        Command::Eval { common, checkpoint, subset, no_postprocess, latency_budget, overlays } => {
            let o = Overrides { no_postprocess, latency_budget_s: latency_budget, ..common.overrides() };
            evaluate::run(&settings(&common, &o)?, &checkpoint, subset, overlays)
        }
        Command::Predict { common, checkpoint, no_postprocess, overlay, resolution, images } => {
            let o = Overrides { no_postprocess, ..common.overrides() };
            predict::run(&settings(&common, &o)?, &checkpoint, &images, resolution, overlay)
        }
        Command::Selftest { seed } => {
            let reports = scan_core::selftest::run_all(seed)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            anyhow::ensure!(failed == 0, "{failed} of {} checks failed", reports.len());
            println!("all {} checks passed", reports.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
