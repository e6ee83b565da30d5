//! Command-line front end for the thermostat-flow laboratory.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "thermoflow",
    version,
    about = "Thermostat flows on unit sphere bundles: orbits, spectra, entropy production, \
             variances, curvature criteria, and operator-identity checks."
)]
struct Cli {
    /// TOML run configuration; a built-in flat-torus default is used when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data-parallel stages (affects wall time only,
    /// never results).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output root directory (overrides the config and the THERMOFLOW_OUT
    /// environment variable).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one orbit and tabulate the sampled states.
    Simulate,
    /// Measure the full Lyapunov spectrum with convergence history.
    Lyapunov,
    /// Estimate entropy production with batch-mean error bars.
    Entropy,
    /// Integrated variance of the alignment observable along the orbit.
    Variance,
    /// Entropy production across a coupling grid, fitted at the origin.
    EntropyCurve,
    /// Randomized supremum scan of the curvature-type criteria.
    Criteria,
    /// Residual refinement checks for the operator identities.
    Identities,
    /// Run a named end-to-end study (`scenario list` shows the catalog).
    Scenario {
        /// Scenario name, or `list`.
        name: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }

    let cfg = match config::load(cli.config.as_deref(), cli.seed) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let root = config::resolve_out_root(cli.out, &cfg);

    let result = match &cli.command {
        Command::Simulate => commands::simulate(&cfg, &root),
        Command::Lyapunov => commands::lyapunov(&cfg, &root),
        Command::Entropy => commands::entropy(&cfg, &root),
        Command::Variance => commands::variance(&cfg, &root),
        Command::EntropyCurve => commands::entropy_curve(&cfg, &root),
        Command::Criteria => commands::criteria(&cfg, &root),
        Command::Identities => commands::identities(&cfg, &root),
        Command::Scenario { name } => commands::scenario(name, &cfg, &root),
    };

    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            // Parameter rejections surface as schema violations (exit 2);
            // anything else is an internal failure (exit 1).
            if let Some(CoreErrorRef::Invalid(name, why)) = classify(&e) {
                eprintln!("config error in `{name}`: {why}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

enum CoreErrorRef<'a> {
    Invalid(&'a str, &'a str),
}

fn classify(e: &anyhow::Error) -> Option<CoreErrorRef<'_>> {
    e.downcast_ref::<thermoflow_core::Error>()
        .and_then(|err| match err {
            thermoflow_core::Error::InvalidParameter { name, why } => {
                Some(CoreErrorRef::Invalid(name, why))
            }
            _ => None,
        })
}
