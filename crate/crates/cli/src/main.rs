//! `troch`: preprocess, mask, phantom, train, inpaint, measure, evaluate, selftest.
//!
//! Logs go to stderr; results go to stdout as JSON lines or to files.
//! Exit status is 0 on success, 1 for invalid input or usage, 2 for
//! runtime failures.

mod commands;
mod config;
mod error;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Preset;

#[derive(Debug, Parser)]
#[command(
    name = "troch",
    version,
    about = "Pseudo-healthy inpainting of the trochlear region in knee volumes"
)]
struct Cli {
    /// JSON config merged over the preset. Unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base preset; overrides the file's `preset` key.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// More logging (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample, crop/pad and intensity-normalize a volume.
    Preprocess(PreprocessArgs),
    /// Build the inpainting mask from a bone label map.
    Mask(MaskArgs),
    /// Generate synthetic knee phantoms with known groove geometry.
    Phantom(PhantomArgs),
    /// Train the denoiser on healthy volumes.
    Train(TrainArgs),
    /// Regenerate the masked region of one or more volumes.
    Inpaint(InpaintArgs),
    /// Measure sulcus angle and groove depth; compare paired volumes.
    Measure(MeasureArgs),
    /// Masked MSE, PSNR and SSIM against references.
    Evaluate(EvaluateArgs),
    /// Run the built-in oracle and invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// `.vol` (with sidecar) or uncompressed `.nii`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// Bone label map; every non-zero label counts as bone.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Image on the same grid, needed for `--masked` and `--clean`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also write the image with the mask region zeroed.
    #[arg(long, requires = "input")]
    masked: Option<PathBuf>,
    /// Also write the image with its background set to 0.
    #[arg(long, requires = "input")]
    clean: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Healthy,
    Dysplastic,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["sa", "family"]))]
struct PhantomArgs {
    /// Sulcus angle in degrees.
    #[arg(long, requires = "tgd")]
    sa: Option<f64>,
    /// Groove depth in mm.
    #[arg(long, requires = "sa")]
    tgd: Option<f64>,
    /// Draw a family of phantoms instead of a single one.
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long, default_value_t = 1, requires = "family")]
    count: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// File stem; defaults to `phantom` or `<family>_NNN`.
    #[arg(long)]
    name: Option<String>,
    /// Noise standard deviation inside the body.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of `<stem>.vol` + `<stem>_labels.vol` pairs; an optional
    /// `<stem>_mask.vol` replaces the mask derived from the labels.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the header goes next to it with `.json` appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-iteration loss as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InpaintArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// One mask per input, or a single mask shared by all.
    #[arg(long, required = true, num_args = 1..)]
    mask: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output file for one input, output directory for several.
    #[arg(long)]
    out: PathBuf,
    /// Input `i` is sampled with seed `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    /// Volumes processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dump intermediate coefficient files here.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MeasureArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Label maps used to pick the slice of largest patella cross-section.
    #[arg(long, conflicts_with = "slice", num_args = 1..)]
    labels: Vec<PathBuf>,
    /// Fixed axial slice index.
    #[arg(long)]
    slice: Option<usize>,
    /// Paired volumes (e.g. inpainted); enables the signed-rank test.
    #[arg(long, num_args = 1..)]
    after: Vec<PathBuf>,
    /// Paired before/after table.
    #[arg(long, requires = "after")]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    #[arg(long = "ref", required = true, num_args = 1..)]
    reference: Vec<PathBuf>,
    /// One mask per prediction, or a single mask shared by all.
    #[arg(long, required = true, num_args = 1..)]
    mask: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write the aggregate as JSON.
    #[arg(long)]
    aggregate: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Random instances per randomized check.
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// One JSON object per check instead of text.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
