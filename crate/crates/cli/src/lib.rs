//! Command-line pipeline: phantom volumes, DRR projection, FPD simulation,
//! dataset generation, training, inference, evaluation and reporting.
//!
//! Every subcommand resolves a [`config::RunConfig`] (defaults, then
//! `--config`, then flags), writes it to `effective-config.json` in the
//! output directory and appends to `run.log` there.

pub mod config;
pub mod error;
pub mod runlog;

mod data;
mod evaluate;
mod model;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, CliResult};
use runlog::RunLog;

pub const THREADS_ENV: &str = "FLUOROSYNTH_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fluorosynth",
    version,
    about = "DRR to flat-panel-detector image synthesis"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON config merged over the defaults; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides every section seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Desk-scale defaults: coarse volumes and detector, small networks,
    /// scaled schedule.
    #[arg(long, global = true)]
    toy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Cyclegan,
    Unet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Drr,
    Unet,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Voxelize a thoracic phantom into `phantom.fsvol`.
    Phantom,
    /// Project a volume into a normalized DRR (`drr.pgm`).
    Project {
        #[arg(long)]
        volume: PathBuf,
        /// Couch roll in degrees; overrides `geometry.couch_roll_deg`.
        #[arg(long, allow_hyphen_values = true)]
        roll: Option<f64>,
        /// Ray sum mapped to 1; defaults to the image maximum.
        #[arg(long)]
        q_max: Option<f64>,
    },
    /// Degrade a DRR into a stand-in FPD image (`fpd.pgm`).
    SimulateFpd {
        /// Normalized DRR to degrade.
        #[arg(long, required_unless_present = "volume", conflicts_with = "volume")]
        drr: Option<PathBuf>,
        /// Volume to shift by `fpd.shift_mm` and project before degrading.
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        roll: Option<f64>,
        #[arg(long)]
        q_max: Option<f64>,
    },
    /// Generate a paired DRR/FPD dataset with preprocessing and subimages.
    MakeDataset,
    /// Train the CycleGAN (or the U-Net baseline) on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "cyclegan")]
        model: ModelKind,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Translate DRR images with a trained checkpoint and time each one.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
    },
    /// Score a checkpoint on the test split against the DRR baseline.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "drr")]
        baseline: Baseline,
        /// U-Net checkpoint, required with `--baseline unet`.
        #[arg(long)]
        unet_checkpoint: Option<PathBuf>,
    },
    /// Render metric tables, box-plot quantiles and image panels.
    Report {
        /// Directory holding `report.json` from `evaluate`.
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, requires = "checkpoint")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        unet_checkpoint: Option<PathBuf>,
        /// Number of test pairs rendered as panels.
        #[arg(long, default_value_t = 4)]
        panels: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Project { .. } => "project",
            Command::SimulateFpd { .. } => "simulate-fpd",
            Command::MakeDataset => "make-dataset",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
        }
    }
}

fn configure_threads() -> CliResult<Option<usize>> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::config(format!(
                "{THREADS_ENV} must be a positive integer, got {raw:?}"
            ))
        })?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(Some(n))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let threads = configure_threads()?;
    let g = &cli.global;
    let cfg = RunConfig::resolve(g.toy, g.config.as_deref(), g.seed, g.out.clone())?;
    cfg.write_effective(&cfg.out)?;
    let mut log = RunLog::open(&cfg.out)?;
    log.line(format!(
        "fluorosynth {} {} seed={} toy={} threads={}",
        env!("CARGO_PKG_VERSION"),
        cli.command.name(),
        cfg.seed,
        g.toy,
        threads.map_or("default".to_string(), |n| n.to_string())
    ));
    let result = match cli.command {
        Command::Phantom => data::phantom(&cfg, &mut log),
        Command::Project {
            volume,
            roll,
            q_max,
        } => data::project(&cfg, &mut log, &volume, roll, q_max),
        Command::SimulateFpd {
            drr,
            volume,
            roll,
            q_max,
        } => data::simulate(
            &cfg,
            &mut log,
            drr.as_deref(),
            volume.as_deref(),
            roll,
            q_max,
        ),
        Command::MakeDataset => data::make_dataset(&cfg, &mut log),
        Command::Train {
            data,
            model,
            resume,
        } => model::train(&cfg, &mut log, &data, model, resume),
        Command::Infer { checkpoint, input } => model::infer(&cfg, &mut log, &checkpoint, &input),
        Command::Evaluate {
            data,
            checkpoint,
            baseline,
            unet_checkpoint,
        } => evaluate::evaluate(
            &cfg,
            &mut log,
            &data,
            &checkpoint,
            baseline,
            unet_checkpoint.as_deref(),
        ),
        Command::Report {
            eval,
            data,
            checkpoint,
            unet_checkpoint,
            panels,
        } => report::report(
            &cfg,
            &mut log,
            &eval,
            data.as_deref().zip(checkpoint.as_deref()),
            unet_checkpoint.as_deref(),
            panels,
        ),
    };
    match &result {
        Ok(()) => log.line(format!("done in {:.3} s", log.elapsed_s())),
        Err(e) => log.line(format!("failed: {e}")),
    }
    result
}

/// Runs one subcommand and returns the process exit code. Failures print a
/// single JSON line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let err = CliError::config(first.to_string());
            eprintln!("{}", err.to_json_line());
            return err.kind.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.kind.exit_code()
        }
    }
}
