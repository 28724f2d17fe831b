//! `crowdcorr`: batch interface over the crowdcorr library.
//!
//! Every subcommand reads files, writes a JSON report embedding a
//! [`manifest::RunManifest`], and exits with 0 (success), 2 (input or parse
//! error), 3 (statistical precondition) or 4 (config schema error).

mod commands;
mod grouping;
mod manifest;
mod plot;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crowdcorr::ErrorKind;

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Input, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Input => 2,
            ErrorKind::Statistical => 3,
            ErrorKind::Config => 4,
        }
    }
}

impl From<crowdcorr::Error> for CliError {
    fn from(e: crowdcorr::Error) -> Self {
        CliError { kind: e.kind(), message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "crowdcorr",
    version,
    about = "Weights, spatial correlation and adjusted tests for crowdsourced line lists"
)]
struct Cli {
    /// Worker threads for permutation and simulation loops (default: all cores).
    #[arg(long, global = true, env = "CROWDCORR_THREADS")]
    threads: Option<usize>,
    /// Also print a human-readable table to standard output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Post-sampling ratios and per-case weights.
    Weights(WeightsArgs),
    /// Weighted parameter estimates with naive and adjusted SEs.
    Estimate(EstimateArgs),
    /// Moran's I and the fitted two-level correlation model.
    Correlate(CorrelateArgs),
    /// Mann-Whitney or Kruskal-Wallis test with a dependence adjustment.
    Test(TestArgs),
    /// Monte Carlo study of bias, SEs and test calibration.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub regions: PathBuf,
    /// Total size of the reference design (default: number of valid cases).
    #[arg(long)]
    pub target_n: Option<u64>,
    /// `sum_to_n` or `raw`.
    #[arg(long, default_value = "sum_to_n")]
    pub normalization: String,
    /// Fold uncovered or empty strata into an adjacent stratum.
    #[arg(long)]
    pub merge_strata: bool,
    /// Adjacency used for merging: rook, knn:K, idw:P.
    #[arg(long, default_value = "knn:4")]
    pub scheme: String,
    /// Explicit adjacency edge list; overrides --scheme.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Output directory for ratios.csv, weights.csv and weights.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub cases: PathBuf,
    /// Weights CSV from `weights`; omitted means unit weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Comma-separated variables: age, delay.
    #[arg(long, default_value = "age,delay")]
    pub var: String,
    /// none, traveler, sex, group_label, region or cutoff:YYYY-MM-DD.
    #[arg(long, default_value = "none")]
    pub groupby: String,
    /// Regions CSV; enables spatial SE adjustment and relative risks.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Weight scheme for the spatial fit.
    #[arg(long, default_value = "knn:4")]
    pub scheme: String,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// SE adjustment: kish or spatial (default: spatial when --regions is given).
    #[arg(long)]
    pub se: Option<String>,
    /// Age-bin edges, e.g. 0,10,20,...,120.
    #[arg(long)]
    pub age_bins: Option<String>,
    /// Per-region age proportions: region_id followed by one column per bin.
    #[arg(long)]
    pub age_dist: Option<PathBuf>,
    /// Age proportions for regions without their own distribution.
    #[arg(long)]
    pub age_fallback: Option<String>,
    /// Reference bin index for relative risks.
    #[arg(long)]
    pub reference_bin: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long, default_value = "knn:4")]
    pub scheme: String,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, default_value = "delay")]
    pub var: String,
    /// Group means are removed before fitting when set.
    #[arg(long, default_value = "none")]
    pub groupby: String,
    #[arg(long, default_value_t = 999)]
    pub perms: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub groupby: String,
    #[arg(long, default_value = "delay")]
    pub var: String,
    /// auto, mann_whitney or kruskal_wallis.
    #[arg(long, default_value = "auto")]
    pub method: String,
    /// Mann-Whitney null: auto, exact or normal.
    #[arg(long, default_value = "auto")]
    pub mode: String,
    /// none, ess, block_perm or region_perm.
    #[arg(long, default_value = "none")]
    pub adjust: String,
    /// Comma-separated design effects, one per group, for --adjust ess.
    #[arg(long)]
    pub deff: Option<String>,
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long, default_value = "knn:4")]
    pub scheme: String,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, default_value_t = 999)]
    pub perms: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// SVG chart of bias and rejection rates.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let text = match cli.command {
        Command::Weights(a) => commands::weights::run(&a)?,
        Command::Estimate(a) => commands::estimate::run(&a)?,
        Command::Correlate(a) => commands::correlate::run(&a)?,
        Command::Test(a) => commands::test::run(&a)?,
        Command::Simulate(a) => commands::simulate::run(&a)?,
    };
    if cli.pretty {
        print!("{text}");
    }
    Ok(())
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
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
