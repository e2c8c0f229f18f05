//! Batch execution: a battery is a list of scenario files plus an optional
//! family of randomly generated instances, run in parallel with per-run
//! assertions and an aggregate verdict.

use crate::run::{execute, RunChecks, RunOptions, RunSummary};
use crate::scenario_file::{load_scenario, BatteryFile, RandomBattery};
use anyhow::{Context, Result};
use freeway_control::controller::ControllerConfig;
use freeway_control::equilibrium::EquilibriumConfig;
use freeway_control::plant::{CongestedShape, FreewayParams};
use freeway_control::scenario::{DisturbancePolicy, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::io::Write;
use std::path::Path;

/// Fixed shell of the randomized family: identical physical cells, so the
/// only unknowns are the exit splits, demand slopes, and nominal inflows.
const CELL_CAPACITY: f64 = 100.0;
const MAX_INFLOW: f64 = 40.0;
const SUPPLY_SLOPE: f64 = 0.5;
const BREAKPOINT: f64 = 50.0;
const DEMAND_FLOOR: f64 = 10.0;
const BOX_EDGE: f64 = 40.0;
const MARGIN: f64 = 0.4;
const METER_FLOOR: f64 = 0.5;
const FIRST_CELL_INFLOW_CAP: f64 = 8.0;
const OTHER_INFLOW_CAP: f64 = 3.0;
const SIGMA: f64 = 0.5;

fn policy_for(index: usize) -> (DisturbancePolicy, &'static str) {
    match index % 4 {
        0 => (DisturbancePolicy::IidUniform, "iid"),
        1 => (DisturbancePolicy::AdversarialExtremes, "extremes"),
        2 => (DisturbancePolicy::PerStepSeeded, "per-step"),
        _ => (DisturbancePolicy::Constant(Vec::new()), "const"),
    }
}

/// Deterministically generates the `index`-th randomized instance: the
/// true parameters are drawn uniformly over their admissible box, the
/// initial occupancies uniformly over the state space, and draws that land
/// on an infeasible equilibrium are rejected and redrawn.
pub fn random_scenario(cfg: &RandomBattery, index: usize) -> Result<Scenario> {
    let n = cfg.sizes[index % cfg.sizes.len()];
    let controlled: Vec<usize> = if n >= 5 { vec![1, 3] } else { vec![1] };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed.wrapping_add(index as u64));
    let v_max: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 {
                FIRST_CELL_INFLOW_CAP
            } else {
                OTHER_INFLOW_CAP
            }
        })
        .collect();
    let shape: Vec<CongestedShape> = (0..n)
        .map(|i| {
            if (i + index) % 2 == 0 {
                CongestedShape::ConstantAtCapacity
            } else {
                CongestedShape::LinearDropToMin
            }
        })
        .collect();
    let (policy, policy_slug) = policy_for(index);
    let tau = 0.9 * MARGIN * MARGIN * SIGMA.powi(n as i32)
        / (OTHER_INFLOW_CAP - METER_FLOOR);

    for _attempt in 0..64 {
        let r: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(MARGIN..=1.0 - MARGIN))
            .collect();
        let p_exit: Vec<f64> = (0..n - 1)
            .map(|_| rng.gen_range(0.0..=1.0 - MARGIN))
            .collect();
        let v_star_uncontrolled: Vec<f64> = (0..n)
            .filter(|i| !controlled.contains(i))
            .map(|i| rng.gen_range(0.0..=v_max[i]))
            .collect();
        let v_star_controlled: Vec<f64> = controlled
            .iter()
            .map(|&i| rng.gen_range(METER_FLOOR + MARGIN..=v_max[i]))
            .collect();
        let x0: Vec<f64> = (0..n)
            .map(|_| CELL_CAPACITY * (1.0 - rng.gen::<f64>()))
            .collect();
        let seed = rng.gen();

        let policy = match &policy {
            DisturbancePolicy::Constant(_) => {
                DisturbancePolicy::Constant(vec![0.5; n - 1])
            }
            other => other.clone(),
        };
        let scenario = Scenario {
            id: format!("rand-{index:03}-n{n}-{policy_slug}"),
            params: FreewayParams {
                a: vec![CELL_CAPACITY; n],
                q: vec![MAX_INFLOW; n],
                c: vec![SUPPLY_SLOPE; n],
                delta: vec![BREAKPOINT; n],
                r,
                f_min: vec![DEMAND_FLOOR; n],
                shape: shape.clone(),
                p_exit,
                controlled: controlled.clone(),
                v_star_uncontrolled,
                epsilon: MARGIN,
            },
            equilibrium: EquilibriumConfig {
                v_star_controlled,
                mu: vec![BOX_EDGE; n],
                v_max: v_max.clone(),
                target_density: None,
            },
            controller: ControllerConfig {
                sigma: SIGMA,
                tau,
                b: vec![METER_FLOOR; controlled.len()],
            },
            x0,
            theta_hat0: None,
            w0: None,
            horizon: cfg.horizon,
            policy,
            seed,
        };
        if scenario.validate().is_ok() {
            return Ok(scenario);
        }
    }
    anyhow::bail!(
        "no feasible draw for instance {index} after 64 attempts (seed {})",
        cfg.base_seed
    )
}

/// One finished battery member.
pub struct BatteryEntry {
    pub summary: RunSummary,
    pub checks: RunChecks,
}

/// Aggregate result of a battery: per-run entries in input order, isolated
/// failures, and the overall verdict.
pub struct BatteryOutcome {
    pub id: String,
    pub entries: Vec<BatteryEntry>,
    /// `(scenario label, error)` for runs that failed to load or simulate.
    pub failures: Vec<(String, String)>,
    /// Fraction of runs whose post-lock residual fit cleanly.
    pub fit_strict_fraction: f64,
    pub min_fit_fraction: f64,
    pub pass: bool,
}

impl fmt::Display for BatteryOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "battery {} ({} runs)", self.id, self.entries.len())?;
        for entry in &self.entries {
            writeln!(
                f,
                "  [{}] {}",
                if entry.checks.pass() { "ok" } else { "FAIL" },
                entry.summary
            )?;
        }
        for (label, err) in &self.failures {
            writeln!(f, "  [FAIL] {label}: {err}")?;
        }
        writeln!(
            f,
            "  clean exponential fits: {:.1}% (required {:.1}%)",
            100.0 * self.fit_strict_fraction,
            100.0 * self.min_fit_fraction
        )?;
        write!(f, "  verdict: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

impl BatteryOutcome {
    /// One CSV row per run, mirroring the per-run summaries.
    pub fn write_summary_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            out,
            "id,lock_time,rate,r_squared,prefactor,estimated_c,m_bound,max_gap,\
             initial_residual,final_residual,wall_ms,pass"
        )?;
        for entry in &self.entries {
            let s = &entry.summary;
            let (rate, r2, prefactor) = match &s.fit {
                crate::analysis::RateFit::Fitted {
                    rate,
                    r_squared,
                    prefactor,
                    ..
                } => (
                    format!("{rate:.6e}"),
                    format!("{r_squared:.6}"),
                    format!("{prefactor:.6e}"),
                ),
                _ => (String::new(), String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{:.6e},{},{},{:.6e},{:.6e},{:.3},{}",
                s.id,
                s.lock_time.map_or(String::new(), |t| t.to_string()),
                rate,
                r2,
                prefactor,
                s.estimated_c,
                s.m_bound.map_or(String::new(), |m| m.to_string()),
                s.max_recovery_gap,
                s.initial_residual,
                s.final_residual,
                s.wall_ms,
                entry.checks.pass()
            )?;
        }
        Ok(())
    }
}

/// Materializes every battery member, labeled for error reporting.
fn collect_scenarios(
    battery: &BatteryFile,
    base_dir: &Path,
) -> Vec<(String, Result<Scenario>)> {
    let mut out = Vec::new();
    for rel in &battery.scenario_files {
        let path = base_dir.join(rel);
        out.push((
            rel.clone(),
            load_scenario(&path).with_context(|| format!("loading {rel}")),
        ));
    }
    if let Some(random) = &battery.random {
        for index in 0..random.count {
            out.push((format!("random #{index}"), random_scenario(random, index)));
        }
    }
    out
}

/// Runs every member (in parallel), isolating per-scenario failures. The
/// battery passes iff nothing failed outright, every run locked onto the
/// true parameters and stayed in the box, every run's residual either fit
/// exponentially or collapsed by six orders of magnitude, and the clean-fit
/// fraction met the configured minimum.
pub fn run_battery(
    battery: &BatteryFile,
    base_dir: &Path,
    opts: &RunOptions,
) -> Result<BatteryOutcome> {
    let mut run_opts = opts.clone();
    run_opts.lock_tol = battery.lock_tol;

    let labeled = collect_scenarios(battery, base_dir);
    let results: Vec<(String, Result<BatteryEntry>)> = labeled
        .into_par_iter()
        .map(|(label, scenario)| {
            let entry = scenario.and_then(|s| {
                execute(&s, &run_opts).map(|art| BatteryEntry {
                    summary: art.summary,
                    checks: art.checks,
                })
            });
            (label, entry)
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (label, result) in results {
        match result {
            Ok(entry) => entries.push(entry),
            Err(err) => failures.push((label, format!("{err:#}"))),
        }
    }

    let strict = entries.iter().filter(|e| e.checks.fit_strict).count();
    let fit_strict_fraction = if entries.is_empty() {
        1.0
    } else {
        strict as f64 / entries.len() as f64
    };
    let pass = failures.is_empty()
        && entries.iter().all(|e| e.checks.pass())
        && fit_strict_fraction >= battery.min_fit_fraction;

    Ok(BatteryOutcome {
        id: battery.id.clone(),
        entries,
        failures,
        fit_strict_fraction,
        min_fit_fraction: battery.min_fit_fraction,
        pass,
    })
}
