//! Command-line frontend. Every subcommand resolves its settings as flag over
//! config file over default, runs one library operation, and writes its
//! outputs atomically. Reports carry the effective settings for provenance.

mod commands;
mod config;
mod smoke;

pub use config::{load_config, parse_config, Resolver, Switch};

use crate::error::{Error, Result};
use crate::inference::SCHEDULE_VERSION;
use crate::model::CHECKPOINT_VERSION;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

pub const REPORT_VERSION: u32 = 1;

/// Opaque build identifier stamped into reports. Override at compile time
/// with `GCDM_BUILD_ID`.
pub const BUILD_ID: &str = match option_env!("GCDM_BUILD_ID") {
    Some(id) => id,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Parser)]
#[command(name = "gcdm", version, about = "Evidential decision fusion and guided training for multi-exit classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a multi-exit MLP and write a checkpoint.
    Train(TrainArgs),
    /// Write per-exit logits of one data split as a JSON Lines store.
    DumpLogits(DumpArgs),
    /// Compare plain and fused per-exit predictions on a logits store.
    Fuse(FuseArgs),
    /// Accuracy when every sample stops at a fixed exit.
    EvalAnytime(AnytimeArgs),
    /// Fit per-exit confidence thresholds for a FLOPs budget.
    Calibrate(CalibrateArgs),
    /// Replay a budget schedule on a logits store.
    EvalBudget(BudgetArgs),
    /// Pairwise diversity of exits on a logits store.
    Diversity(DiversityArgs),
    /// Record every state of one sample's fusion chain.
    TraceFusion(TraceArgs),
    /// Run train, dump-logits, fuse, calibrate and eval-budget end to end.
    Smoke(SmokeArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of every random stream in the run.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DataSource {
    Synthetic,
    Idx,
    Csv,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "idx" => Ok(DataSource::Idx),
            "csv" => Ok(DataSource::Csv),
            other => Err(Error::config(format!("unknown data source '{other}' (synthetic | idx | csv)"))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Idx => "idx",
            DataSource::Csv => "csv",
        })
    }
}

#[derive(Clone, Debug, Args)]
struct DataArgs {
    /// synthetic | idx | csv
    #[arg(long)]
    data: Option<DataSource>,
    /// IDX image file (data=idx).
    #[arg(long)]
    images: Option<String>,
    /// IDX label file (data=idx).
    #[arg(long)]
    labels: Option<String>,
    /// CSV dataset with header label,f0,f1,... (data=csv).
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Clone, Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    exits: Option<usize>,
    /// Hidden layers per block.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Clone, Debug, Args)]
struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    /// edl | cross-entropy
    #[arg(long)]
    loss: Option<crate::training::LossMode>,
    /// Guidance from the last exit: on | off.
    #[arg(long)]
    regularize: Option<Switch>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    /// belief | alpha
    #[arg(long)]
    edl_mean_mode: Option<crate::evidential::EdlMeanMode>,
    #[arg(long)]
    ce_weight: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<String>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    report: Option<String>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<String>,
    /// train | validation | test
    #[arg(long)]
    split: Option<crate::data::Split>,
    #[arg(long)]
    out: Option<String>,
}

/// Fusion settings shared by the evaluation commands.
#[derive(Clone, Debug, Args)]
struct FusionArgs {
    /// Use sequential evidential fusion: on | off.
    #[arg(long)]
    fusion: Option<Switch>,
    /// balanced | attention
    #[arg(long)]
    fusion_mode: Option<crate::fusion::FusionMode>,
    /// Rescale each fused state to unit mass: on | off.
    #[arg(long)]
    renormalize: Option<Switch>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FuseMethod {
    Cdm,
    CdmNobalance,
    Avg,
    Wavg,
    Vote,
    Dempster,
    Nn,
}

impl FromStr for FuseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cdm" => FuseMethod::Cdm,
            "cdm-nobalance" => FuseMethod::CdmNobalance,
            "avg" => FuseMethod::Avg,
            "wavg" => FuseMethod::Wavg,
            "vote" => FuseMethod::Vote,
            "dempster" => FuseMethod::Dempster,
            "nn" => FuseMethod::Nn,
            other => {
                return Err(Error::config(format!(
                    "unknown fusion method '{other}' (cdm | cdm-nobalance | avg | wavg | vote | dempster | nn)"
                )))
            }
        })
    }
}

impl fmt::Display for FuseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FuseMethod::Cdm => "cdm",
            FuseMethod::CdmNobalance => "cdm-nobalance",
            FuseMethod::Avg => "avg",
            FuseMethod::Wavg => "wavg",
            FuseMethod::Vote => "vote",
            FuseMethod::Dempster => "dempster",
            FuseMethod::Nn => "nn",
        })
    }
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    logits: Option<String>,
    /// cdm | cdm-nobalance | avg | wavg | vote | dempster | nn
    #[arg(long)]
    method: Option<FuseMethod>,
    /// Held-out store used to fit wavg weights or nn fusers.
    #[arg(long)]
    fit_logits: Option<String>,
    /// Rescale each fused state to unit mass (cdm methods): on | off.
    #[arg(long)]
    renormalize: Option<Switch>,
    #[arg(long)]
    nn_hidden: Option<usize>,
    #[arg(long)]
    nn_epochs: Option<usize>,
    #[arg(long)]
    nn_lr: Option<f64>,
    #[arg(long)]
    report: Option<String>,
    /// Per-exit summary CSV.
    #[arg(long)]
    csv: Option<String>,
}

#[derive(Debug, Args)]
struct AnytimeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fusion: FusionArgs,
    #[arg(long)]
    logits: Option<String>,
    /// 1-based exit; every exit when omitted.
    #[arg(long)]
    exit: Option<usize>,
    #[arg(long)]
    report: Option<String>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fusion: FusionArgs,
    /// Validation store.
    #[arg(long)]
    logits: Option<String>,
    /// Checkpoint whose architecture supplies the exit costs.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Comma-separated cumulative FLOPs per exit, instead of a checkpoint.
    #[arg(long)]
    costs: Option<String>,
    /// Mean FLOPs per sample.
    #[arg(long)]
    budget: Option<f64>,
    /// Schedule path.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fusion: FusionArgs,
    #[arg(long)]
    logits: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    report: Option<String>,
}

#[derive(Debug, Args)]
struct DiversityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    logits: Option<String>,
    #[arg(long)]
    report: Option<String>,
    /// Long-form CSV of every pairwise metric.
    #[arg(long)]
    csv: Option<String>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    logits: Option<String>,
    /// Record id; the first record when omitted.
    #[arg(long)]
    sample: Option<String>,
    /// balanced | attention
    #[arg(long)]
    fusion_mode: Option<crate::fusion::FusionMode>,
    #[arg(long)]
    renormalize: Option<Switch>,
    /// Trace CSV path.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    report: Option<String>,
}

#[derive(Debug, Args)]
struct SmokeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Directory receiving every stage's outputs.
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Serialize)]
struct FormatVersions {
    report: u32,
    checkpoint: u32,
    schedule: u32,
}

/// Provenance wrapper around every JSON report.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    build_id: &'static str,
    command: &'a str,
    seed: u64,
    format_versions: FormatVersions,
    config: &'a BTreeMap<String, String>,
    result: T,
}

fn report_bytes<T: Serialize>(command: &str, seed: u64, config: &BTreeMap<String, String>, result: T) -> Result<Vec<u8>> {
    crate::io::to_json_bytes(&Envelope {
        tool: "gcdm",
        build_id: BUILD_ID,
        command,
        seed,
        format_versions: FormatVersions {
            report: REPORT_VERSION,
            checkpoint: CHECKPOINT_VERSION,
            schedule: SCHEDULE_VERSION,
        },
        config,
        result,
    })
}

/// Single-line, machine-parseable error description.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("gcdm: error kind={} code={}: {msg}", e.kind(), e.exit_code())
}

/// Parses `argv` (program name first) and runs one subcommand, returning
/// the process exit code. Errors are reported on stderr as one line.
/// Whether any subcommand takes `--key`; such keys may appear in a shared config file.
pub(crate) fn is_known_key(key: &str) -> bool {
    static KEYS: std::sync::OnceLock<BTreeSet<String>> = std::sync::OnceLock::new();
    KEYS.get_or_init(|| {
        Cli::command()
            .get_subcommands()
            .flat_map(|c| c.get_arguments().filter_map(|a| a.get_long().map(str::to_owned)).collect::<Vec<_>>())
            .filter(|k| k != "config" && k != "help")
            .collect()
    })
    .contains(key)
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                // A closed pipe (e.g. `| head`) is not worth a panic.
                let _ = write!(std::io::stdout(), "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("gcdm: error kind=usage code=2: {first}");
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => commands::train(a),
        Command::DumpLogits(a) => commands::dump_logits(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::EvalAnytime(a) => commands::eval_anytime(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::EvalBudget(a) => commands::eval_budget(a),
        Command::Diversity(a) => commands::diversity(a),
        Command::TraceFusion(a) => commands::trace_fusion(a),
        Command::Smoke(a) => smoke::smoke(a),
    }
}
