use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdcgl::cli_io::{
    cmd_infer, cmd_roundtrip, cmd_simulate, cmd_sweep, RoundtripOutcome,
};

/// Simulate-and-infer toolkit for the 2D time-dependent complex
/// Ginzburg-Landau equation.
///
/// Exit codes: 0 success, 1 converged but out of tolerance,
/// 2 non-convergence, 3 numerical blowup, 4 IO/format/config errors.
#[derive(Parser)]
#[command(name = "tdcgl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-evolve the configured model and write snapshots.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer eta, alpha, the phase and f(I) from three intensity
    /// snapshots. Ground-truth phase files are never read.
    Infer {
        #[arg(long)]
        i0: PathBuf,
        #[arg(long)]
        i2: PathBuf,
        #[arg(long)]
        i4: PathBuf,
        /// CSV of "I,g_over_alpha" rows, or the literal "zero".
        #[arg(long, default_value = "zero")]
        g_table: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, measure dissipation, infer, and verify against the
    /// ground truth.
    Roundtrip {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase-retrieval convergence map over initial phase amplitudes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated a_phi values.
        #[arg(long, default_value = "0.5,1.0,1.5,2.0")]
        a_phi: String,
    },
}

fn run(cli: Cli) -> Result<u8, tdcgl::Error> {
    match cli.command {
        Command::Simulate { config, out } => {
            let report = cmd_simulate(&config, &out)?;
            println!(
                "wrote {} intensity and {} phase snapshots (dz_plane = {}) to {}",
                report.intensity_files.len(),
                report.phase_files.len(),
                report.dz_plane,
                out.display()
            );
            Ok(0)
        }
        Command::Infer {
            i0,
            i2,
            i4,
            g_table,
            config,
            out,
        } => {
            let g = if g_table == "zero" {
                None
            } else {
                Some(PathBuf::from(g_table))
            };
            let report = cmd_infer(&i0, &i2, &i4, g.as_deref(), &config, &out)?;
            println!(
                "eta_hat = {}  alpha_hat = {} +- {}  N_final = {}",
                report.eta_hat, report.alpha_hat, report.alpha_fwhm, report.n_final
            );
            Ok(0)
        }
        Command::Roundtrip { config, out } => {
            let report = cmd_roundtrip(&config, &out)?;
            match &report.outcome {
                RoundtripOutcome::Converged { checks, all_passed } => {
                    for c in checks {
                        println!(
                            "{:<26} {:>13.6e}  {}",
                            c.name,
                            c.value,
                            if c.passed { "PASS" } else { "FAIL" }
                        );
                    }
                    println!("report: {}", report.report_path.display());
                    Ok(if *all_passed { 0 } else { 1 })
                }
                RoundtripOutcome::NonConverged { reason } => {
                    eprintln!("non-converged: {reason}");
                    println!("report: {}", report.report_path.display());
                    Ok(2)
                }
            }
        }
        Command::Sweep { config, out, a_phi } => {
            let values: Vec<f64> = a_phi
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| tdcgl::Error::Config(format!("bad a_phi '{t}': {e}")))
                })
                .collect::<Result<_, _>>()?;
            let report = cmd_sweep(&config, &out, &values)?;
            for row in &report.rows {
                println!(
                    "a_phi = {:>5}: {} after {} iterations",
                    row.a_phi,
                    if row.converged {
                        "converged"
                    } else {
                        "non-converged"
                    },
                    row.iterations
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
