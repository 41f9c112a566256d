//! Command-line front end: `prep`, `detect`, `tune`, `eval` and `phantom`.

pub mod commands;
pub mod config;
pub mod snapshot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;

#[derive(Debug, Parser)]
#[command(
    name = "rimscan",
    version,
    about = "Paramagnetic rim lesion detection post-processing"
)]
pub struct Cli {
    /// Key-value config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for fold assignment and phantom generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Does not affect outputs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop per-lesion patches from a QSM volume and a FLAIR lesion mask.
    Prep(PrepArgs),
    /// Classify every lesion of a cohort at fixed thresholds.
    Detect(DetectArgs),
    /// Cross-validated threshold tuning on a labelled cohort.
    Tune(TuneArgs),
    /// Detection and segmentation metrics from verdicts and ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic cohort with known rims and labels.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub qsm: PathBuf,
    #[arg(long)]
    pub flair_mask: PathBuf,
    /// Subject-level rim probability map, cropped alongside the QSM.
    #[arg(long)]
    pub prob: Option<PathBuf>,
    #[arg(long)]
    pub subject: Option<String>,
    /// Patch size as `x,y,z`.
    #[arg(long)]
    pub patch_size: Option<String>,
    #[arg(long)]
    pub dilation_mm: Option<f64>,
    /// 6, 18 or 26.
    #[arg(long)]
    pub connectivity: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Directory holding a cohort manifest.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Directory of `<subject>_les<id>_prob.nii.gz` maps overriding the manifest.
    #[arg(long)]
    pub prob_dir: Option<PathBuf>,
    #[arg(long)]
    pub tau_p: Option<f64>,
    #[arg(long)]
    pub tau_r: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub prob_dir: Option<PathBuf>,
    /// CSV `subject_id,lesion_id,label` overriding manifest labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Sensitivity band as `lo,hi`.
    #[arg(long)]
    pub band: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Reuse a `folds.json` from an earlier run instead of assigning folds.
    #[arg(long)]
    pub fold_file: Option<PathBuf>,
    /// Explicit probability-threshold grid, comma-separated.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Verdicts as JSON lines.
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Cohort supplying labels and ground-truth rims.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Directory of predicted rim masks from `detect`.
    #[arg(long)]
    pub rims: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec, key-value or JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub prl_fraction: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub blur_radius_vox: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run a parsed command line; returns the warnings to report.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let jobs = config::resolve(cli.jobs, &file, "jobs", 0usize)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let ctx = commands::Context {
        file,
        seed: cli.seed,
    };
    pool.install(|| match &cli.command {
        Command::Prep(a) => commands::prep(&ctx, a),
        Command::Detect(a) => commands::detect(&ctx, a),
        Command::Tune(a) => commands::tune(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Phantom(a) => commands::phantom(&ctx, a),
    })
}

/// 3 for broken internal invariants, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let internal = err
        .chain()
        .filter_map(|c| c.downcast_ref::<rimscan_core::Error>())
        .any(rimscan_core::Error::is_internal);
    if internal {
        3
    } else {
        2
    }
}
