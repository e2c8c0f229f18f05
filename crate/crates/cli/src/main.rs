//! `freeway` — runs ramp-metering scenarios, batteries, feasibility checks,
//! and decay-rate fits from the command line.
//!
//! Exit codes: 0 on success, 1 when an assertion or feasibility check
//! fails, 2 on invalid input (unreadable files, malformed scenarios).

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use freeway_control::equilibrium::check_feasibility;
use freeway_control::equilibrium::estimated_equilibrium;
use freeway_control::observer::ParameterEstimate;
use freeway_control::plant::{Output, State};
use freeway_harness::analysis::{
    distance, estimate_distance, fit_exponential, measurement_distance,
};
use freeway_harness::battery::run_battery;
use freeway_harness::csv_io::parse_trajectory;
use freeway_harness::run::{execute, RunOptions};
use freeway_harness::scenario_file::{load_scenario, BatteryFile};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freeway",
    about = "Adaptive ramp-metering simulation and identification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory CSV (and optional plots).
    Simulate {
        /// Scenario file (JSON).
        scenario: PathBuf,
        /// Override the scenario's horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Override the scenario's disturbance seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $FREEWAY_OUT_DIR or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write SVG plots.
        #[arg(long)]
        svg: bool,
    },
    /// Run a battery of scenarios and print the aggregate table.
    Sweep {
        /// Battery file (JSON).
        battery: PathBuf,
        /// Output directory for per-run CSVs and the summary table
        /// (default: $FREEWAY_OUT_DIR or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing per-run artifacts; just print the table.
        #[arg(long)]
        no_artifacts: bool,
    },
    /// Check a scenario's nominal inflows against the equilibrium bounds.
    CheckFeasibility {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
    /// Fit an exponential decay rate to a previously written trajectory.
    EstimateRate {
        /// Trajectory CSV produced by `simulate`.
        trajectory: PathBuf,
        /// Scenario file; when given, the full composite residual
        /// (state + window + estimates) is reconstructed instead of the
        /// distance-to-final-state proxy.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// First step of the fit window (default 0).
        #[arg(long, default_value_t = 0)]
        tail_start: usize,
    },
}

fn default_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("FREEWAY_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn simulate_cmd(
    path: &Path,
    horizon: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    svg: bool,
) -> Result<u8> {
    let mut scenario = load_scenario(path)?;
    if let Some(h) = horizon {
        scenario.horizon = h;
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let opts = RunOptions {
        out_dir: Some(default_out_dir(out)),
        plots: svg,
        ..RunOptions::default()
    };
    let art = execute(&scenario, &opts)?;
    println!("{}", art.summary);
    for warning in &art.run.refs.warnings {
        println!("  warning: {warning}");
    }
    if let Some(csv) = &art.csv_path {
        println!("  trajectory: {}", csv.display());
    }
    Ok(if art.checks.pass() { 0 } else { 1 })
}

fn sweep_cmd(path: &Path, out: Option<PathBuf>, no_artifacts: bool) -> Result<u8> {
    let battery = BatteryFile::load(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = default_out_dir(out);
    let opts = RunOptions {
        out_dir: if no_artifacts {
            None
        } else {
            Some(out_dir.clone())
        },
        ..RunOptions::default()
    };
    let outcome = run_battery(&battery, &base_dir, &opts)?;
    println!("{outcome}");
    if !no_artifacts {
        std::fs::create_dir_all(&out_dir)?;
        let summary_path = out_dir.join(format!("{}_summary.csv", battery.id));
        let mut file = std::fs::File::create(&summary_path)
            .with_context(|| format!("creating {}", summary_path.display()))?;
        outcome.write_summary_csv(&mut file)?;
        println!("summary table: {}", summary_path.display());
    }
    Ok(if outcome.pass { 0 } else { 1 })
}

fn check_feasibility_cmd(path: &Path) -> Result<u8> {
    let scenario = load_scenario(path)?;
    let report = check_feasibility(&scenario.params, &scenario.v_star_full())?;
    println!("{report}");
    if !report.feasible {
        return Ok(1);
    }
    match scenario.validate() {
        Ok(refs) => {
            println!(
                "scenario valid; gain {} within bound {:.6e}",
                scenario.controller.tau, refs.tau_bound
            );
            for warning in &refs.warnings {
                println!("warning: {warning}");
            }
            Ok(0)
        }
        Err(err) => {
            println!("inflows feasible, but the scenario is rejected: {err}");
            Ok(1)
        }
    }
}

/// Composite residual series reconstructed from a trajectory CSV plus its
/// scenario: available for steps `1..horizon` (the file does not record
/// the pre-run measurement window or the post-run estimate).
fn composite_from_csv(
    table: &freeway_harness::csv_io::TrajectoryTable,
    scenario: &freeway_control::scenario::Scenario,
) -> Result<Vec<f64>> {
    let refs = scenario.validate()?;
    let v_star_metered: Vec<f64> = refs
        .ctx
        .controlled
        .iter()
        .map(|&i| refs.v_star_full[i])
        .collect();
    let mut residuals = Vec::new();
    for (prev, row) in table.rows.iter().zip(table.rows.iter().skip(1)) {
        let theta = ParameterEstimate {
            p_exit: row.p_hat.clone(),
            v_uncontrolled: row.v_hat_uncontrolled.clone(),
            r: row.r_hat.clone(),
        };
        let (_, v_hat) = estimated_equilibrium(&theta, &refs.ctx);
        let window = Output {
            x: State(prev.x.clone()),
            q_out: prev.q_out.clone(),
            q_link: prev.q_link.clone(),
        };
        residuals.push(
            distance(&row.x, &refs.x_star)
                + measurement_distance(&window, &refs.y_star)
                + estimate_distance(&theta, &refs.theta_true)
                + distance(&v_hat, &v_star_metered),
        );
    }
    Ok(residuals)
}

fn estimate_rate_cmd(
    trajectory: &Path,
    scenario: Option<PathBuf>,
    tail_start: usize,
) -> Result<u8> {
    let text = std::fs::read_to_string(trajectory)
        .with_context(|| format!("reading {}", trajectory.display()))?;
    let table = parse_trajectory(text.as_bytes())?;
    let (residuals, label) = match scenario {
        Some(path) => {
            let scenario = load_scenario(&path)?;
            (
                composite_from_csv(&table, &scenario)?,
                "composite residual (steps 1..horizon-1)",
            )
        }
        None => {
            let proxy: Vec<f64> = table
                .rows
                .iter()
                .map(|row| distance(&row.x, &table.final_x))
                .collect();
            (proxy, "distance to the final state (proxy residual)")
        }
    };
    let fit = fit_exponential(&residuals, tail_start);
    println!("{label}: {fit}");
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate {
            scenario,
            horizon,
            seed,
            out,
            svg,
        } => simulate_cmd(&scenario, horizon, seed, out, svg),
        Command::Sweep {
            battery,
            out,
            no_artifacts,
        } => sweep_cmd(&battery, out, no_artifacts),
        Command::CheckFeasibility { scenario } => check_feasibility_cmd(&scenario),
        Command::EstimateRate {
            trajectory,
            scenario,
            tail_start,
        } => estimate_rate_cmd(&trajectory, scenario, tail_start),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
