//! `pianist`: align MIDI performances, extract deviation features, identify
//! performers by cross-validated minimum KL divergence, and generate
//! synthetic benchmarks.
//!
//! Settings may come from `--config FILE` (JSON); flags take precedence over
//! the file, and the file over built-in defaults.
//!
//! Exit codes: 0 success, 2 usage or input error, 1 internal error.

mod commands;
mod config;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_bandwidths, parse_list, parse_weights, ListValue, RunConfig, Weights};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    /// Core errors raised while processing user-supplied data.
    pub fn from_input(e: pianist_core::Error) -> CliError {
        use pianist_core::Error as E;
        match e {
            E::Smf { .. } | E::NoteTable { .. } | E::InvalidInput(_) | E::Csv(_) | E::Json(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pianist", version, about = "Performer identification from MIDI performances")]
struct Cli {
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align performances and write the aligned note table.
    Align(IoArgs),
    /// Write every performer's deviation series as CSV.
    Features {
        #[command(flatten)]
        io: IoArgs,
        /// Feature kinds to dump, e.g. OT,IOI,OTD,DL,ND.
        #[arg(long, value_parser = parse_list)]
        features: Option<ListValue>,
    },
    /// Leave-one-group-out evaluation of the minimum-KL classifier.
    Evaluate {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Generate a synthetic score and performers.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IoArgs {
    /// Performance files or directories.
    #[arg(long, num_args = 1..)]
    input: Option<Vec<PathBuf>>,
    /// Score file or directory, or a performer id; defaults to the performance of median length.
    #[arg(long)]
    reference: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// histogram, kde or gmm; a comma list with --sweep.
    #[arg(long, value_parser = parse_list)]
    model: Option<ListValue>,
    /// Fused feature kinds, e.g. IOI,DL,ND.
    #[arg(long, value_parser = parse_list)]
    features: Option<ListValue>,
    /// One fusion weight per feature.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<Weights>,
    /// Histogram bin count.
    #[arg(long)]
    bins: Option<usize>,
    /// KDE bandwidths, e.g. IOI=0.01,DL=1.5.
    #[arg(long, value_parser = parse_bandwidths)]
    bandwidths: Option<std::collections::BTreeMap<String, f64>>,
    /// GMM component count (1 to 3).
    #[arg(long)]
    gmm_k: Option<usize>,
    /// Number of cross-validation groups.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate every feature subset and report the best per family.
    #[arg(long)]
    sweep: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    performers: Option<usize>,
    /// Notes per performance.
    #[arg(long)]
    notes: Option<usize>,
    /// Spread of the performer profiles; 0 makes them share parameters.
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// mid, csv or both.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn flags(command: &Command) -> RunConfig {
    let io = |a: &IoArgs| RunConfig {
        input: a.input.clone(),
        reference: a.reference.clone(),
        out: a.out.clone(),
        ..RunConfig::default()
    };
    match command {
        Command::Align(a) => io(a),
        Command::Features { io: a, features } => RunConfig {
            features: features.clone(),
            ..io(a)
        },
        Command::Evaluate { io: a, model: m } => RunConfig {
            model: m.model.clone(),
            features: m.features.clone(),
            weights: m.weights.clone().map(|w| w.0),
            bins: m.bins,
            bandwidths: m.bandwidths.clone(),
            gmm_k: m.gmm_k,
            groups: m.groups,
            seed: m.seed,
            sweep: m.sweep.then_some(true),
            ..io(a)
        },
        Command::Synth(s) => RunConfig {
            performers: s.performers,
            notes: s.notes,
            separation: s.separation,
            seed: s.seed,
            format: s.format.clone(),
            out: s.out.clone(),
            ..RunConfig::default()
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut flag_values = flags(&cli.command);
    flag_values.jobs = cli.jobs;
    let config = file.overridden_by(flag_values);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Align(_) => commands::align(&config),
        Command::Features { .. } => commands::features(&config),
        Command::Evaluate { .. } => commands::evaluate(&config),
        Command::Synth(_) => commands::synth(&config),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
