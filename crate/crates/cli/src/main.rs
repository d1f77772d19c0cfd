use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twoweight_cli::{parse_seeds, run, verify, ExperimentConfig, Suite};

#[derive(Parser)]
#[command(
    name = "twoweight",
    about = "Desk-scale numerical laboratory for the two-weight Hilbert transform",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Dyadic tree depth.
    #[arg(long, default_value_t = 6)]
    depth: u8,
    /// Goodness distance exponent, in (0, 1/2).
    #[arg(long = "eps", default_value_t = 0.2)]
    eps: f64,
    /// Goodness scale-separation parameter.
    #[arg(long, default_value_t = 2)]
    r: u8,
    /// Seed range: `a..b`, `a..=b`, or a single seed.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Weight family for the source measure
    /// (uniform|random|power[:a]|cantor[:n]|doubling[:t]).
    #[arg(long = "sigma-family", default_value = "random")]
    sigma_family: String,
    /// Weight family for the target measure.
    #[arg(long = "w-family", default_value = "random")]
    w_family: String,
    /// Suite selection: identities|lemmas|constants|questions|all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Output directory for report.json, constants.csv, ratios.csv,
    /// failures/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Kernel truncation scale for the sensitivity evidence row.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Iteration budget for heuristic lower-bound searches.
    #[arg(long, default_value_t = 60)]
    budget: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected suite over the seed grid.
    Run(CommonArgs),
    /// Run the full assertable battery (all suites) at the given scale.
    Verify(CommonArgs),
}

fn build_config(args: &CommonArgs) -> twoweight_core::Result<ExperimentConfig> {
    let config = ExperimentConfig {
        depth: args.depth,
        epsilon: args.eps,
        r: args.r,
        seeds: parse_seeds(&args.seeds)?,
        sigma_family: args.sigma_family.clone(),
        w_family: args.w_family.clone(),
        suite: args.suite.parse::<Suite>()?,
        out: args.out.clone(),
        delta: args.delta,
        budget: args.budget,
        threads: None,
        fault_sign_flip: std::env::var("TWOWEIGHT_FAULT_SIGN_FLIP").is_ok(),
    };
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, is_verify) = match &cli.command {
        Command::Run(a) => (a, false),
        Command::Verify(a) => (a, true),
    };
    let config = match build_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = if is_verify { verify(&config) } else { run(&config) };
    match result {
        Ok(report) => {
            println!(
                "{} checks, {} failed, {:.2}s; outputs in {}",
                report.summary.total_checks,
                report.summary.failed_checks,
                report.wall_clock_secs,
                config.out.display()
            );
            for f in &report.failures {
                eprintln!(
                    "FAIL suite={} seed={} check={} ({})",
                    f.suite, f.seed, f.check, f.detail
                );
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("run error: {e}");
            ExitCode::from(2)
        }
    }
}
