//! Library behind the `lidaraug` command.
//!
//! Every subcommand is a plain function over parsed arguments so tests can
//! drive it without spawning a process. [`run`] dispatches; [`exit_code`]
//! maps its result to the process status.

pub mod commands;
pub mod evaluator;
pub mod files;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Invalid flags, unreadable policy or bank, missing inputs an op needs.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// What a command did. Failures are per-item problems that did not stop it.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn say(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.failures.is_empty() => EXIT_OK,
        Ok(_) => EXIT_PARTIAL,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => EXIT_CONFIG,
        Err(_) => EXIT_PARTIAL,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lidaraug",
    version,
    about = "Lidar point-cloud augmentation with a two-knob search space"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Laf1,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic frames.
    Generate(GenerateArgs),
    /// Augment every frame of a directory.
    Apply(ApplyArgs),
    /// Cut labeled objects out of frames into an exemplar bank.
    BuildBank(BuildBankArgs),
    /// Rescale each op so its standalone optimum sits at the anchor.
    Align(AlignArgs),
    /// Grid-search the magnitude and probability knobs.
    Search(SearchArgs),
    /// Convert between frames and range images.
    Project(ProjectArgs),
    /// Print the built-in policy file.
    DefaultPolicy(DefaultPolicyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Scene config (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, env = "LIDARAUG_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value = "frame-")]
    pub prefix: String,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Directory of `.laf1` frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for augmented frames and `manifest.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Policy file; the built-in policy when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Global magnitude, `m >= 0`.
    #[arg(long)]
    pub m: f64,
    /// Global probability, `0 <= p <= 1`.
    #[arg(long)]
    pub p: f64,
    #[arg(long, env = "LIDARAUG_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Exemplar bank for paste box.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Partner frames for swap background; the input frames when omitted.
    #[arg(long)]
    pub partners: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BuildBankArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated classes; all classes when omitted.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluatorArgs {
    /// External evaluator, run as `<cmd> m p seed`; the synthetic proxy when omitted.
    #[arg(long)]
    pub evaluator_cmd: Option<String>,
    #[arg(long, env = "LIDARAUG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Template policy whose offsets and clips are kept.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Candidate grids, one op per line.
    #[arg(long)]
    pub grids: PathBuf,
    /// Aligned policy file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-op optima and scores.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub anchor_m: f64,
    #[arg(long, default_value_t = 0.5)]
    pub anchor_p: f64,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = lidaraug_core::tune::default_m_grid())]
    pub grid_m: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = lidaraug_core::tune::default_p_grid())]
    pub grid_p: Vec<f64>,
    /// Score table; an existing one is resumed.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input is a range image; write a frame.
    #[arg(long)]
    pub reverse: bool,
    /// Check that frame -> image -> frame recovers every kept point bit for bit.
    #[arg(long)]
    pub roundtrip: bool,
    /// Image size for frames that carry none.
    #[arg(long, default_value_t = 64)]
    pub rows: u32,
    #[arg(long, default_value_t = 2650)]
    pub cols: u32,
}

#[derive(Debug, Args)]
pub struct DefaultPolicyArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError("--jobs must be at least 1".into()).into());
        }
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match cli.command {
        Command::Generate(a) => commands::cmd_generate(&a),
        Command::Apply(a) => commands::cmd_apply(&a),
        Command::BuildBank(a) => commands::cmd_build_bank(&a),
        Command::Align(a) => commands::cmd_align(&a),
        Command::Search(a) => commands::cmd_search(&a),
        Command::Project(a) => commands::cmd_project(&a),
        Command::DefaultPolicy(a) => commands::cmd_default_policy(&a),
    }
}
