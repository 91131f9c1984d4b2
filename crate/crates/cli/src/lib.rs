//! Orchestration behind the `masc` binary.

pub mod commands;
pub mod config;
pub mod overlay;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use masc::layout::FieldMode;
use thiserror::Error;

pub use commands::{run_eval, run_mosaic, run_raw, run_synth, CountOutcome, EvalOutcome, ProviderKind, SynthOutcome};
pub use config::{ConfigFile, CountRange, Dims};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{0}")]
    InsufficientOverlap(String),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::InsufficientOverlap(_) => 4,
            CliError::Output { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "masc", version, about = "Per-row maize stand counts from UAV imagery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count plants in an orthomosaic, detecting per overlapping patch.
    Mosaic(MosaicArgs),
    /// Count plants from per-frame labels and pairwise homographies.
    Raw(RawArgs),
    /// Generate a synthetic field with ground truth.
    Synth(SynthArgs),
    /// Compare predicted counts with manual counts.
    Eval(EvalArgs),
}

/// Flags shared by the counting commands.
#[derive(Debug, Clone, Default, Args)]
pub struct CountArgs {
    /// `key=value` file of flag defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [env MASC_OUT_DIR, default masc_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// NMS IoU threshold [0.25].
    #[arg(long)]
    pub iou: Option<f64>,
    /// Minimum detection confidence [0.25].
    #[arg(long)]
    pub conf: Option<f64>,
    /// Layout histogram bin width, pixels [8].
    #[arg(long)]
    pub bin: Option<f64>,
    /// Layout smoothing window, odd number of bins [9].
    #[arg(long)]
    pub window: Option<usize>,
    /// Signal floor as a fraction of the profile maximum [0.10].
    #[arg(long)]
    pub prominence: Option<f64>,
    /// Relative dip depth that splits merged peaks [0.5].
    #[arg(long)]
    pub valley_ratio: Option<f64>,
    /// nursery (ranges split by alleys) or production [nursery].
    #[arg(long)]
    pub field_mode: Option<FieldMode>,
    /// Known row direction in degrees; skips orientation estimation.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Worker threads; 0 uses all cores [0].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write overlay.png.
    #[arg(long)]
    pub overlay: bool,
    /// Write intermediate maps under stages/.
    #[arg(long)]
    pub dump_stages: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MosaicArgs {
    #[command(flatten)]
    pub common: CountArgs,
    /// Orthomosaic image.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// classical or labels-dir [classical, or labels-dir when --labels-dir is set].
    #[arg(long)]
    pub provider: Option<ProviderKind>,
    /// Directory of patch_<row>_<col>.txt label files.
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
    /// Square patch side, pixels [1280].
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patch overlap fraction [0.10].
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Keep boxes cut by an interior patch edge.
    #[arg(long)]
    pub keep_edge_boxes: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RawArgs {
    #[command(flatten)]
    pub common: CountArgs,
    /// Directory of frame_NNNNNN.{png,txt} and hom_NNNNNN.txt files.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Homography files map frame i-1 to frame i instead of i to i-1.
    #[arg(long)]
    pub invert_pairwise: bool,
    /// Frame size WIDTHxHEIGHT for frames without an image file.
    #[arg(long)]
    pub frame_size: Option<Dims>,
    /// Warp the frames into mosaic.png.
    #[arg(long)]
    pub render: bool,
    /// Largest global canvas allowed, pixels [500000000].
    #[arg(long)]
    pub pixel_budget: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// `key=value` file of flag defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [env MASC_OUT_DIR, default masc_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    /// Random seed for the field and the flight [0].
    pub seed: Option<u64>,
    /// Number of ranges [3].
    #[arg(long)]
    pub ranges: Option<usize>,
    /// Rows per range [4].
    #[arg(long)]
    pub rows: Option<usize>,
    /// Planting positions per row, N or MIN-MAX [20].
    #[arg(long)]
    pub plants: Option<CountRange>,
    #[arg(long)]
    /// Distance between rows, pixels [91].
    pub row_pitch: Option<f64>,
    #[arg(long)]
    /// Unplanted gap between ranges, pixels [122].
    pub alley_gap: Option<f64>,
    #[arg(long)]
    /// Distance between planting positions along a row, pixels [30.5].
    pub spacing: Option<f64>,
    #[arg(long)]
    /// Uniform position jitter, pixels [2].
    pub jitter: Option<f64>,
    #[arg(long)]
    /// Probability that a position holds two plants [0.05].
    pub double_rate: Option<f64>,
    #[arg(long)]
    /// Probability that a position holds three plants [0].
    pub triple_rate: Option<f64>,
    /// Weed blobs per million pixels [0].
    #[arg(long)]
    pub weed_density: Option<f64>,
    #[arg(long)]
    /// Soil border around the planted area, pixels [80].
    pub margin: Option<f64>,
    /// Skip the simulated flight.
    #[arg(long)]
    pub no_flight: bool,
    /// Flight frame size WIDTHxHEIGHT [320x320].
    #[arg(long)]
    pub frame_size: Option<Dims>,
    /// Flight stride WIDTHxHEIGHT [160x160].
    #[arg(long)]
    pub stride: Option<Dims>,
    /// Gaussian noise on pairwise translations, pixels [0].
    #[arg(long)]
    pub hom_noise: Option<f64>,
    /// Patch side for the generated patch_labels/ [1280].
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patch overlap for the generated patch_labels/ [0.10].
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// `key=value` file of flag defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predicted counts CSV (range,row,count).
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Manual counts CSV (range,row,count).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory [env MASC_OUT_DIR, default masc_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command and prints its summary to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mosaic(args) => print_counts(&run_mosaic(&args)?),
        Command::Raw(args) => print_counts(&run_raw(&args)?),
        Command::Synth(args) => {
            let out = run_synth(&args)?;
            println!(
                "wrote {} ({} plants, {} rows, {} frames)",
                out.out_dir.display(),
                out.plants,
                out.rows,
                out.frames
            );
        }
        Command::Eval(args) => {
            let out = run_eval(&args)?;
            print!("{}", out.result.summary());
            println!("R2={:.6}", out.result.r2);
        }
    }
    Ok(())
}

fn print_counts(out: &CountOutcome) {
    let report = &out.counting.report;
    println!(
        "plants={} rows={} unassigned={} theta={:.0}",
        report.total(),
        report.rows.len(),
        report.unassigned_plants(),
        out.counting.theta
    );
    println!("wrote {}", out.out_dir.display());
}
