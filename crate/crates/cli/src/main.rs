mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "trajscope", version, about = "Behavioral analysis of software-engineering agent trajectories")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// Master seed for every sampling step
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for outputs; relative output paths resolve against it
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Table format when an output path has no .csv/.json extension
    #[arg(long, global = true, default_value = "csv")]
    pub format: trajscope::table::Format,

    /// Re-run pipeline stages even when their outputs are up to date
    #[arg(long, global = true)]
    pub force: bool,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse raw logs into canonical JSONL
    Ingest(commands::IngestArgs),
    /// Classify actions, detect errors and segment cascades
    Annotate(commands::AnnotateArgs),
    /// Per-trajectory and per-configuration behavioral features
    Features(commands::FeaturesArgs),
    /// Motif-graph features
    Cfg(commands::CfgArgs),
    /// Binary behavioral patterns, or threshold calibration
    Patterns(commands::PatternsArgs),
    /// Per-configuration effect sizes
    Effects(commands::EffectsArgs),
    /// Random-effects pooling, or moderator meta-regression
    Meta(commands::MetaArgs),
    /// Bootstrap, permutation and leave-one-level-out diagnostics
    Robust(commands::RobustArgs),
    /// Trajectory-type taxonomy
    Taxonomy(commands::TaxonomyArgs),
    /// Generate a synthetic corpus with planted effects
    Synth(commands::SynthArgs),
    /// Run every stage end to end
    Run(commands::RunArgs),
    /// Combined per-feature table and beeswarm data
    Report(commands::ReportArgs),
}

/// Bad flag values detected after parsing; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else if err.downcast_ref::<trajscope::Error>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        EXIT_DATA
    } else {
        EXIT_INTERNAL
    }
}

/// Joins the error chain, dropping causes whose text the previous message
/// already includes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match std::panic::catch_unwind(|| commands::dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
