//! `hybridsim`: batch driver for hybrid-control simulation studies.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use hybrid_core::harness::{
    builtin_scenario, emit_report, read_summary_csv, render_table, run_study_with_cache, truth_seed, write_long_csv,
    write_summary_csv, Method, OutputFormat, ScenarioEntry, StudyConfig,
};
use hybrid_core::truth::{true_marginal_loghr, TruthCache, DEFAULT_REPS};
use hybrid_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURES: u8 = 3;

#[derive(Parser)]
#[command(name = "hybridsim", version, about = "Simulation studies of hybrid control arms in survival trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write its report files.
    Simulate(SimulateArgs),
    /// Estimate the true marginal log hazard ratio of a built-in scenario.
    Truth {
        #[arg(long)]
        scenario: usize,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        /// Master seed; the oracle uses the same derived stream as `simulate`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-render the summary of a finished study.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// JSON study configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario numbers, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<usize>,
    #[arg(long = "mt-size", value_delimiter = ',')]
    mt_size: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method labels, e.g. `NB,FB,JIPTW.Cox`.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Reuse and extend a truth cache (`scenario,theta0,reps,mcse`).
    #[arg(long)]
    truth_cache: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Table,
    Long,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn config_error(message: String) -> anyhow::Error {
    Error::Config(message).into()
}

fn build_config(args: &SimulateArgs) -> anyhow::Result<StudyConfig> {
    let mut config = match &args.config {
        Some(path) => StudyConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => config_error(e.to_string()),
            other => other.into(),
        })?,
        None => StudyConfig::default(),
    };
    if !args.scenario.is_empty() {
        config.scenarios = args.scenario.iter().map(|&n| ScenarioEntry::Builtin(n)).collect();
    }
    if !args.mt_size.is_empty() {
        config.mt_sizes = args.mt_size.clone();
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if !args.methods.is_empty() {
        config.methods = args.methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    config.out_dir = Some(args.out.clone());
    config.validate()?;
    Ok(config)
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<u8> {
    let config = build_config(args)?;
    let mut cache = match &args.truth_cache {
        Some(path) => TruthCache::load(path)?,
        None => TruthCache::default(),
    };
    let report = run_study_with_cache(&config, &mut cache)?;
    if let Some(path) = &args.truth_cache {
        cache.save(path)?;
    }
    let written = emit_report(&report, &args.out, &OutputFormat::ALL)?;
    print!("{}", render_table(&report.summaries));
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    if report.exceeds_failure_threshold() {
        eprintln!(
            "error: some cells failed in more than {:.0}% of replications",
            100.0 * config.failure_threshold
        );
        return Ok(EXIT_FAILURES);
    }
    Ok(0)
}

fn truth(scenario: usize, reps: usize, seed: u64) -> anyhow::Result<u8> {
    let spec = builtin_scenario(scenario)?;
    let result = true_marginal_loghr(&spec, reps, truth_seed(seed)).map_err(|e| match e {
        Error::Argument(m) => config_error(m),
        other => other.into(),
    })?;
    let mut out = io::stdout().lock();
    writeln!(out, "scenario,theta0,reps,mcse,resampled")?;
    writeln!(out, "{},{},{},{},{}", result.scenario, result.theta0, result.reps, result.mcse, result.resampled)?;
    Ok(0)
}

fn report(input: &Path, format: ReportFormat) -> anyhow::Result<u8> {
    let path = input.join(OutputFormat::Summary.file_name());
    let file = File::open(&path).with_context(|| format!("reading {}", path.display()))?;
    let summaries = read_summary_csv(file)?;
    let stdout = io::stdout().lock();
    match format {
        ReportFormat::Csv => write_summary_csv(&summaries, stdout)?,
        ReportFormat::Long => write_long_csv(&summaries, stdout)?,
        ReportFormat::Table => {
            let mut stdout = stdout;
            stdout.write_all(render_table(&summaries).as_bytes())?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Truth { scenario, reps, seed } => truth(*scenario, *reps, *seed),
        Command::Report { input, format } => report(input, *format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
