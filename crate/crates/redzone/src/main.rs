//! Command-line front end: closed-form evaluation, identity verification,
//! and Monte Carlo simulation of refracted risk processes.
//!
//! Exit codes: 0 success, 2 input error, 3 domain error, 4 verification
//! failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use redzone::cli_io::verify::{cmd_verify, VerifyArgs, VerifySuite};
use redzone::cli_io::{
    cmd_eval, cmd_roots, cmd_simulate, parse_grid, CliError, EvalArgs, GridSet, OutFormat,
    SimulateArgs,
};

#[derive(Parser)]
#[command(
    name = "redzone",
    version,
    about = "Fluctuation and occupation-time identities of refracted risk processes, \
             evaluated in closed form and cross-checked against a path simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputOpts {
    /// Write the output table (or report) to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one closed-form quantity over a parameter grid.
    ///
    /// Grids are a single number, a comma list, or start:stop:count.
    /// Run with an unknown operation name to list the operations.
    Eval {
        /// Model spec file (TOML, or JSON with a .json extension).
        #[arg(long)]
        model: PathBuf,
        /// Operation name, e.g. `exit-up` or `parisian`.
        operation: String,
        /// Start level grid.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        /// Lower exit level grid.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        /// Upper exit level grid.
        #[arg(long)]
        c: Option<String>,
        /// Time-discount rate grid.
        #[arg(long)]
        p: Option<String>,
        /// Occupation (or clock) rate grid.
        #[arg(long)]
        q: Option<String>,
        /// Occupation duration grid (densities only).
        #[arg(long)]
        r: Option<String>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Re-derive the library's identities and report pass/fail per check.
    Verify {
        /// Model spec file (TOML, or JSON with a .json extension).
        #[arg(long)]
        model: PathBuf,
        /// `quick` runs the analytic checks only; `full` adds simulation.
        #[arg(long, value_enum, default_value_t = VerifySuite::Quick)]
        suite: VerifySuite,
        /// Seed for the simulation checks.
        #[arg(long)]
        seed: Option<u64>,
        /// Path count for the simulation checks.
        #[arg(long)]
        paths: Option<usize>,
        /// Override the residual tolerance from the model file's defaults block.
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Estimate one quantity by path simulation, with the closed form
    /// alongside where it applies.
    Simulate {
        /// Model spec file (TOML, or JSON with a .json extension).
        #[arg(long)]
        model: PathBuf,
        /// Target quantity, e.g. `exit` or `bankruptcy`. Run with an
        /// unknown name to list the targets.
        target: String,
        /// Start level.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        /// Lower exit level.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        /// Upper exit level.
        #[arg(long)]
        c: Option<f64>,
        /// Time-discount rate.
        #[arg(long)]
        p: Option<f64>,
        /// Occupation (or clock) rate.
        #[arg(long)]
        q: Option<f64>,
        /// Override the model file's path count.
        #[arg(long)]
        paths: Option<usize>,
        /// Override the model file's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the model file's horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Override the model file's Euler step (diffusion models).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the model file's antithetic-pairing switch.
        #[arg(long)]
        antithetic: Option<bool>,
        /// Also dump the event traces of the first few paths to this CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// How many paths to trace (capped to keep the dump readable).
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..=64))]
        trace_paths: u16,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Dump the exponent roots and weights behind the scale functions.
    Roots {
        /// Model spec file (TOML, or JSON with a .json extension).
        #[arg(long)]
        model: PathBuf,
        /// Discount rate grid.
        #[arg(long, default_value = "0,0.5,1")]
        q: String,
        #[command(flatten)]
        output: OutputOpts,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eval { model, operation, x, a, c, p, q, r, output } => {
            let grid = |text: Option<String>| -> Result<Option<Vec<f64>>, CliError> {
                text.map(|t| parse_grid(&t).map_err(CliError::input)).transpose()
            };
            let args = EvalArgs {
                model,
                operation,
                grids: GridSet {
                    x: grid(x)?,
                    a: grid(a)?,
                    c: grid(c)?,
                    p: grid(p)?,
                    q: grid(q)?,
                    r: grid(r)?,
                },
                format: output.format,
                out: output.out,
            };
            cmd_eval(&args).map(drop)
        }
        Command::Verify { model, suite, seed, paths, tol, output } => {
            let args = VerifyArgs {
                model,
                suite,
                seed,
                paths,
                tol,
                format: output.format,
                out: output.out,
            };
            let report = cmd_verify(&args)?;
            if !report.passed {
                return Err(CliError { code: 4, message: "verification failed".into() });
            }
            Ok(())
        }
        Command::Simulate {
            model,
            target,
            x,
            a,
            c,
            p,
            q,
            paths,
            seed,
            horizon,
            dt,
            antithetic,
            trace,
            trace_paths,
            output,
        } => {
            let args = SimulateArgs {
                model,
                target,
                x,
                a,
                c,
                p,
                q,
                paths,
                seed,
                horizon,
                dt,
                antithetic,
                trace,
                trace_paths: trace_paths as usize,
                format: output.format,
                out: output.out,
            };
            cmd_simulate(&args).map(drop)
        }
        Command::Roots { model, q, output } => {
            let qs = parse_grid(&q).map_err(CliError::input)?;
            cmd_roots(&model, &qs, output.format, output.out.as_deref()).map(drop)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.code as i32);
    }
}
