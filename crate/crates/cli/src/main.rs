//! Batch front end: calibrate, refine, evaluate, synthesize, sweep alpha.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pitchcal::estimation::Subset;
use pitchcal::synth::ViewPreset;
use thiserror::Error;

use config::{parse_grid, parse_list, parse_preset, List, Overrides, RunConfig, Template};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pitchcal", version, about = "Soccer pitch camera calibration from keypoints and lines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate a directory of detection frames.
    Calibrate,
    /// Re-run point/line refinement on existing records.
    Refine {
        /// Directory of calibration records.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Score records against ground truth.
    Evaluate {
        /// Ground-truth directory (`<id>.json`, optional `<id>.calib.json`).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Write synthetic frames and ground truth.
    Synth(SynthArgs),
    /// Compare refinement weights on a synthetic batch.
    SweepAlpha {
        /// Comma-separated weights.
        #[arg(long, value_parser = parse_list::<f64>)]
        alphas: Option<List<f64>>,
        /// Ground-truth directory when it is not `<input>/gt`.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthArgs,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<ViewPreset>,
    /// Noise on keypoints and line points, pixels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    outlier_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Line/point balance of the refinement cost.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    no_pnl: bool,
    /// Comma-separated keypoint subsets (full, main, ground).
    #[arg(long, global = true, value_parser = parse_list::<Subset>)]
    subset: Option<List<Subset>>,
    /// Comma-separated RANSAC thresholds in pixels, `none` for no filtering.
    #[arg(long, global = true, value_parser = parse_grid)]
    ransac_grid: Option<List<Option<f64>>>,
    /// Comma-separated JaC tolerances in pixels.
    #[arg(long, global = true, value_parser = parse_list::<f64>)]
    gammas: Option<List<f64>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    template: Option<Template>,
}

fn overrides(cli: Cli) -> (Command, Option<PathBuf>, Overrides) {
    let c = cli.common;
    let mut o = Overrides {
        input: c.input,
        output: c.output,
        alpha: c.alpha,
        no_pnl: c.no_pnl,
        subsets: c.subset.map(|l| l.0),
        ransac_grid: c.ransac_grid.map(|l| l.0),
        gammas: c.gammas.map(|l| l.0),
        seed: c.seed,
        jobs: c.jobs,
        template: c.template,
        ..Default::default()
    };
    let synth = |o: &mut Overrides, s: &SynthArgs| {
        o.count = s.count;
        o.preset = s.preset;
        o.sigma = s.sigma;
        o.dropout = s.dropout;
        o.outlier_rate = s.outlier_rate;
    };
    match &cli.command {
        Command::Refine { records } => o.records = records.clone(),
        Command::Evaluate { gt } => o.gt = gt.clone(),
        Command::Synth(s) => synth(&mut o, s),
        Command::SweepAlpha { alphas, gt, synth: s } => {
            o.alphas = alphas.as_ref().map(|l| l.0.clone());
            o.gt = gt.clone();
            synth(&mut o, s);
        }
        Command::Calibrate => {}
    }
    (cli.command, c.config, o)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, config, o) = overrides(cli);
    let mut cfg = RunConfig::load(config.as_deref())?;
    cfg.apply(o);
    cfg.validate()?;
    match command {
        Command::Calibrate => commands::run_calibrate(&cfg),
        Command::Refine { .. } => commands::run_refine(&cfg),
        Command::Evaluate { .. } => commands::run_evaluate(&cfg),
        Command::Synth(_) => commands::run_synth(&cfg),
        Command::SweepAlpha { .. } => commands::run_sweep_alpha(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pitchcal: {e}");
            ExitCode::from(e.code())
        }
    }
}
