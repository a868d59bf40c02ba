//! Command-line front end for the logitdyn simulator.
//!
//! Three subcommands cover the workflow:
//!
//! * `simulate` runs one scenario from a JSON config and writes the
//!   trajectory CSV plus probability, modal, and confidence-ratio charts.
//! * `sweep` repeats a scenario across a grid of `rho` or `eta` values and
//!   writes one CSV per cell plus a JSON summary report.
//! * `verify` runs the self-check batteries and reports each comparison.
//!
//! Exit codes: 0 on success, 1 when a run or a verification check fails,
//! 2 on a usage error (unknown flag, malformed value).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use logitdyn::{
    run_scenario, run_suites, run_sweep, write_csv, write_svg, ChartSelector, ScenarioConfig,
    SweepAxis, VerifySuite,
};

#[derive(Parser)]
#[command(
    name = "logitdyn",
    version,
    about = "Logit-space training-dynamics simulator",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv plus SVG charts.
    Simulate {
        /// Path to a scenario config in JSON form.
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving the output files (created if missing).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Remap every arm to the practice sign convention before running.
        #[arg(long)]
        practice: bool,
    },
    /// Run a scenario across a value grid and write per-cell CSVs and a report.
    Sweep {
        /// Path to the base scenario config in JSON form.
        #[arg(long)]
        config: PathBuf,
        /// Which knob the grid varies.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated grid values, e.g. -1e-3,-5e-4,5e-4.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        values: Vec<f64>,
        /// Directory receiving the output files (created if missing).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Remap every arm to the practice sign convention before running.
        #[arg(long)]
        practice: bool,
    },
    /// Run self-check batteries and write verify_report.json.
    Verify {
        /// Which battery to run.
        #[arg(long)]
        suite: VerifySuite,
        /// Directory receiving the JSON report (created if missing).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Simulate {
            config,
            out_dir,
            practice,
        } => {
            let cfg = load_config(&config, practice)?;
            simulate(&cfg, &out_dir)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
            practice,
        } => {
            let cfg = load_config(&config, practice)?;
            sweep(&cfg, axis, &values, &out_dir)
        }
        Command::Verify { suite, out_dir } => verify(suite, &out_dir),
    }
}

fn load_config(path: &Path, practice: bool) -> Result<ScenarioConfig, String> {
    let cfg =
        ScenarioConfig::from_json_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(if practice { cfg.to_practice() } else { cfg })
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn simulate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ExitCode, String> {
    ensure_dir(out_dir)?;
    let records = run_scenario(cfg).map_err(|e| e.to_string())?;

    let csv_path = out_dir.join("trajectory.csv");
    write_csv(&csv_path, &records).map_err(|e| e.to_string())?;
    println!("wrote {} ({} records)", csv_path.display(), records.len());

    for selector in [
        ChartSelector::Probs,
        ChartSelector::Modal,
        ChartSelector::Alphas,
    ] {
        let path = write_svg(out_dir, &records, selector).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    out_dir: &Path,
) -> Result<ExitCode, String> {
    ensure_dir(out_dir)?;
    let outcome = run_sweep(cfg, axis, values).map_err(|e| e.to_string())?;

    for (idx, (_, records)) in outcome.trajectories.iter().enumerate() {
        let path = out_dir.join(format!("sweep_cell_{idx}.csv"));
        write_csv(&path, records).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }

    let report_path = out_dir.join("sweep_report.json");
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| e.to_string())?;
    std::fs::write(&report_path, json).map_err(|e| format!("{}: {e}", report_path.display()))?;
    println!("wrote {}", report_path.display());

    for cell in &outcome.report.cells {
        for arm in &cell.arms {
            println!(
                "{}={:+.6e} {}: final p = [{}]",
                outcome.report.axis.as_str(),
                cell.value,
                arm.tag,
                arm.final_probs
                    .iter()
                    .map(|p| format!("{p:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(suite: VerifySuite, out_dir: &Path) -> Result<ExitCode, String> {
    ensure_dir(out_dir)?;
    let reports = run_suites(suite).map_err(|e| e.to_string())?;

    let mut all_pass = true;
    for suite_report in &reports {
        for check in &suite_report.reports {
            let verdict = if check.pass { "PASS" } else { "FAIL" };
            println!(
                "[{verdict}] {}/{}  abs_err={:.3e}  rel_err={:.3e}  tol={:.1e}",
                suite_report.suite, check.quantity, check.abs_err, check.rel_err, check.tolerance
            );
        }
        all_pass &= suite_report.pass;
    }

    let report_path = out_dir.join("verify_report.json");
    let json = serde_json::to_string_pretty(&reports).map_err(|e| e.to_string())?;
    std::fs::write(&report_path, json).map_err(|e| format!("{}: {e}", report_path.display()))?;
    println!("wrote {}", report_path.display());

    if all_pass {
        println!("verify: all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        let failing: Vec<_> = reports
            .iter()
            .flat_map(|s| s.reports.iter().filter(|c| !c.pass))
            .map(|c| c.quantity.as_str())
            .collect();
        eprintln!("verify: failing checks: {}", failing.join(", "));
        Ok(ExitCode::FAILURE)
    }
}
