use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meancover::harness::{
    cmd_area, cmd_counterexample, cmd_growth, cmd_search_constant, cmd_verify, RunConfig, RunReport,
};
use meancover::Error;

#[derive(Parser)]
#[command(name = "meancover", version, about = "Covering-area and modulus experiments for analytic maps of the disk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report.json, CSV tables and SVG plots.
    #[arg(long, global = true, default_value = "meancover-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Three area oracles per spec and level.
    Area,
    /// Growth function on an r-grid.
    Growth,
    /// Full pipeline for every (spec, M) meeting the area hypothesis.
    Verify,
    /// Empirical bracket for the universal radius.
    SearchConstant,
    /// Meromorphic counterexample checks.
    Counterexample,
}

fn run(cli: &Cli) -> Result<RunReport, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Area => cmd_area(&cfg),
        Command::Growth => cmd_growth(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::SearchConstant => cmd_search_constant(&cfg),
        Command::Counterexample => cmd_counterexample(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            eprintln!("meancover: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("meancover: {e}");
            return ExitCode::from(1);
        }
    };
    match report.write(&cli.out) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("meancover: {e}");
            return ExitCode::from(1);
        }
    }
    for c in &report.summary.violations {
        println!("FAIL {} [{}] slack {:.3e}", c.spec, c.invariant, c.slack);
    }
    if let Some(b) = &report.summary.r0_bracket {
        println!(
            "r0 bracket: [{} = {:.6e}, {:.6}] (upper from {})",
            b.lower_expression, b.lower, b.upper, b.upper_spec
        );
    }
    println!(
        "{}: {} records, {} checks, {} violations",
        report.command,
        report.summary.records,
        report.summary.checks,
        report.summary.violations.len()
    );
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
