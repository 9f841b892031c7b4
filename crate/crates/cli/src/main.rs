use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfbsde_cli::{resolve, CliError, Overrides};

#[derive(Parser)]
#[command(name = "mfbsde", version, about = "Particle solvers for mean-field BSDEs with diagonally quadratic drivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the certificate constants of a fixture as JSON.
    Constants {
        config: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run a scheme and write the report, CSV summary and optional dump.
    Solve {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve, then check oracles and diagnostics; prints a pass/fail table.
    Verify {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Grid study over the configured step counts on nested grids.
    Refine {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Constants { config, fixture, horizon } => {
            let v = mfbsde_cli::constants(config.as_deref(), fixture.as_deref(), horizon)?;
            let text = serde_json::to_string_pretty(&v).map_err(anyhow::Error::from)?;
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Command::Solve { config, overrides } => {
            let v = resolve(config.as_deref(), &overrides)?;
            let a = mfbsde_cli::solve(&v)?;
            println!("report: {}", a.report.display());
            println!("summary: {}", a.summary.display());
            if let Some(d) = a.dump {
                println!("dump: {}", d.display());
            }
        }
        Command::Verify { config, overrides } => {
            let v = resolve(config.as_deref(), &overrides)?;
            let out = mfbsde_cli::verify(&v)?;
            print!("{}", mfbsde_cli::verify::render_table(&out.rows));
            let failures = mfbsde_cli::verify::failures(&out.rows);
            if failures > 0 {
                return Err(CliError::VerifyFailed { failures, table: out.table });
            }
        }
        Command::Refine { config, overrides } => {
            let v = resolve(config.as_deref(), &overrides)?;
            let out = mfbsde_cli::refine(&v)?;
            for r in &out.report.rows {
                println!("steps {:>5}  y0 {:.6}  converged {}", r.steps, r.y0[0], r.converged);
            }
            println!("report: {}", out.json.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
