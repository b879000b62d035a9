//! `hafpn` command-line driver.
//!
//! Exit codes: 0 on success, 1 when a numeric check fails, 2 on bad input,
//! configuration or I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hafpn_core::gradcheck::Scope;
use hafpn_core::metrics::ApMethod;
use hafpn_core::pyramid::{AttentionMode, MergeMode, Placement, Variant};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "hafpn", version, about = "Hybrid-attention feature pyramid toolkit")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the toy backbone and a neck on an HTSR image tensor.
    Forward(ForwardArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Score a detection file against annotated ground truth.
    Eval(EvalArgs),
    /// Write an activation-magnitude heatmap of a feature level as PGM.
    Heatmap(HeatmapArgs),
    /// Split a dataset index into train/val/test id lists.
    Split(SplitArgs),
    /// Time neck forwards for every variant on one input.
    Bench(BenchArgs),
    /// Run the FPN/PAFPN attention ablation on synthetic scenes.
    Ablation(AblationArgs),
    /// Write a seeded random image tensor.
    Synth(SynthArgs),
}

/// Neck settings; flags override the config file, which overrides defaults.
#[derive(Debug, Clone, Args)]
struct NeckArgs {
    /// `neck.cfg` key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `fpn`, `pafpn` or `hafpn`.
    #[arg(long)]
    variant: Option<Variant>,
    /// Enable the EMSA branch (`--use-emsa false` disables it).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    use_emsa: Option<bool>,
    /// Enable the coordinate-attention branch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    use_ca: Option<bool>,
    /// Neck width shared by all levels.
    #[arg(long)]
    channels: Option<usize>,
    /// EMSA head count; must divide the channel count.
    #[arg(long)]
    heads: Option<usize>,
    /// Coordinate-attention channel reduction.
    #[arg(long)]
    reduction: Option<usize>,
    /// HAM MLP hidden width as a multiple of the channel count.
    #[arg(long)]
    hidden_ratio: Option<f64>,
    /// Where HAM sits relative to the top-down merge.
    #[arg(long)]
    placement: Option<Placement>,
    /// `add` or `concat`.
    #[arg(long)]
    merge: Option<MergeMode>,
    /// `full`, or `identity` to replace every HAM with a pass-through.
    #[arg(long)]
    attention: Option<AttentionMode>,
    /// Parameter seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    #[command(flatten)]
    neck: NeckArgs,
    /// Image tensor [N,3,H,W] in HTSR format (single precision).
    #[arg(long)]
    input: PathBuf,
    /// Directory for p3/p4/p5 level files and the manifest.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// `layer`, `attention`, `neck` or `all`.
    #[arg(long, default_value = "all")]
    scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
enum ScopeArg {
    All,
    One(Scope),
}

impl std::str::FromStr for ScopeArg {
    type Err = hafpn_core::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(ScopeArg::All)
        } else {
            s.parse().map(ScopeArg::One)
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset index file, or a directory holding `index.txt` (and
    /// optionally `classes.txt`).
    #[arg(long)]
    gt: PathBuf,
    /// Class table `class_id name` (defaults to insufficient/shifting).
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Detection file, one `image_id class_id score x1 y1 x2 y2` per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = hafpn_core::metrics::DEFAULT_IOU_THR)]
    iou_thr: f64,
    /// `all-points` or `101-point`.
    #[arg(long, default_value = "all-points")]
    ap_method: ApMethod,
    /// Directory for `report.kv` and per-class PR tables.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Level tensor [1,C,H,W] in HTSR format, or a `forward` output directory.
    #[arg(long)]
    input: PathBuf,
    /// Level to draw when `--input` is a directory.
    #[arg(long, default_value = "p3")]
    level: String,
    /// Output PGM path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Dataset index (`image_id width height annotation_path` per line).
    #[arg(long)]
    input: PathBuf,
    /// Train, val and test fractions, e.g. `0.8,0.1,0.1` or `4/5,1/10,1/10`.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    fractions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `train.txt`, `val.txt` and `test.txt`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    neck: NeckArgs,
    /// Image shape N,3,H,W.
    #[arg(long, default_value = "1,3,64,64")]
    shape: String,
    #[arg(long, default_value_t = 10)]
    repeat: usize,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[command(flatten)]
    neck: NeckArgs,
    #[arg(long, default_value_t = 6)]
    scenes: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = hafpn_core::metrics::DEFAULT_IOU_THR)]
    iou_thr: f64,
    #[arg(long, default_value = "all-points")]
    ap_method: ApMethod,
    /// Directory for one `.kv` report per row.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Tensor shape, comma separated.
    #[arg(long, default_value = "1,3,32,32")]
    shape: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

/// Lets `hafpn ... | head` end quietly instead of panicking on a closed pipe.
#[cfg(unix)]
fn default_sigpipe() {
    // SAFETY: restoring the default disposition of a signal before any
    // threads are spawned.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn default_sigpipe() {}

fn main() -> ExitCode {
    default_sigpipe();
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let res = match cli.command {
        Command::Forward(a) => commands::forward(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Eval(a) => commands::eval(a),
        Command::Heatmap(a) => commands::heatmap(a),
        Command::Split(a) => commands::split(a),
        Command::Bench(a) => commands::bench(a),
        Command::Ablation(a) => commands::ablation(a),
        Command::Synth(a) => commands::synth(a),
    };
    match res {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NumericFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
