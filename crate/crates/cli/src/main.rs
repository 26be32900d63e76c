use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskreach::config::LoadedConfig;
use riskreach::pipeline::{run, Mode};
use riskreach::{Error, ErrorKind};

/// Risk-sensitive safe sets for stochastic control systems.
#[derive(Parser)]
#[command(name = "riskreach", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the kernel and solve the exponential-cost DP for every gamma.
    Solve(Common),
    /// Solve, then estimate CVaR of the trajectory maximum by simulation.
    Simulate(Common),
    /// Full pipeline: safe sets, under-approximations, coverage and audits.
    Sets(Common),
    /// Bounded-density DP and its certified sub-level sets.
    Theorem3(Common),
    /// Run the randomized property suite.
    Verify(Common),
    /// Write the transition kernel of every disturbance family as CSV.
    ExportKernel(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_PROPERTY_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Numeric => EXIT_NUMERIC,
        ErrorKind::Io => EXIT_IO,
    }
}

fn execute(mode: Mode, args: Common) -> Result<u8, Error> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let loaded = LoadedConfig::from_path(&args.config)?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let out = args
        .out
        .or_else(|| loaded.config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(loaded.config.system_name()));
    let report = run(&loaded, mode, &out, seed)?;
    for p in &report.properties {
        let status = if p.passed() { "pass" } else { "FAIL" };
        println!("{status} {} ({} checks, {} failures)", p.name, p.cases, p.failures);
        if let Some(d) = &p.detail {
            println!("     first failure: {d}");
        }
    }
    println!("{} files written to {}", report.files.len(), out.display());
    Ok(if report.failed_properties() > 0 {
        EXIT_PROPERTY_FAILURE
    } else {
        0
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Sets(a) => (Mode::Sets, a),
        Command::Theorem3(a) => (Mode::Theorem3, a),
        Command::Verify(a) => (Mode::Verify, a),
        Command::ExportKernel(a) => (Mode::ExportKernel, a),
    };
    match execute(mode, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
