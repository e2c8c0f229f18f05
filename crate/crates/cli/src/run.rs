//! Single-scenario execution: simulate, analyze the logged trajectory,
//! evaluate the per-run assertions, and emit CSV/SVG artifacts.

use crate::analysis::{
    composite_residuals, estimate_errors, fit_exponential, lock_time, max_recovery_gap, RateFit,
    ZERO_LEVEL,
};
use crate::{csv_io, svg};
use anyhow::{Context, Result};
use freeway_control::closed_loop::{
    contraction_margin, contraction_samples, recovery_gap_bound, simulate, SimulationRun,
};
use freeway_control::observer::ParameterEstimate;
use freeway_control::scenario::Scenario;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

/// Knobs shared by `simulate` and `sweep`.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Directory for CSV/SVG artifacts; `None` keeps the run in memory.
    pub out_dir: Option<PathBuf>,
    /// Also emit SVG plots next to the CSV.
    pub plots: bool,
    /// Tolerance for declaring the estimate locked onto the truth.
    pub lock_tol: f64,
    /// Random sample count for the per-run contraction estimate.
    pub contraction_points: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            plots: false,
            lock_tol: 1e-9,
            contraction_points: 2_000,
        }
    }
}

/// Headline numbers for one closed-loop run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub id: String,
    pub horizon: usize,
    /// First step from which the estimate stays within `lock_tol` of the
    /// truth, if any.
    pub lock_time: Option<usize>,
    /// Exponential fit of the composite residual over the post-lock tail.
    pub fit: RateFit,
    /// Worst estimate error over the post-lock steps.
    pub post_lock_estimate_err: Option<f64>,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Sampled contraction rate of the weighted total occupancy.
    pub estimated_c: f64,
    /// Recurrence bound on consecutive steps outside the low-occupancy
    /// box, when the drain condition supports one.
    pub m_bound: Option<usize>,
    /// Why the recurrence bound is unavailable, when it is.
    pub m_bound_note: Option<String>,
    /// Longest observed run of steps whose window missed the recovery set.
    pub max_recovery_gap: usize,
    /// Worst box-constraint slack over the run; anything positive would be
    /// a violation (the plant refuses to produce one, so this is headroom).
    pub max_box_violation: f64,
    pub wall_ms: f64,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lock = match self.lock_time {
            Some(t) => format!("{t}"),
            None => "never".into(),
        };
        let m = match (&self.m_bound, &self.m_bound_note) {
            (Some(m), _) => format!("{m}"),
            (None, Some(_)) => "n/a".into(),
            (None, None) => "?".into(),
        };
        write!(
            f,
            "{}: lock={lock} fit=[{}] C~{:.4} m={m} gap={} residual {:.3e} -> {:.3e} ({:.1} ms)",
            self.id,
            self.fit,
            self.estimated_c,
            self.max_recovery_gap,
            self.initial_residual,
            self.final_residual,
            self.wall_ms
        )
    }
}

/// Pass/fail verdict of the per-run assertions.
#[derive(Debug, Clone, Copy)]
pub struct RunChecks {
    /// The estimate locked onto the truth before the horizon.
    pub locked: bool,
    /// Post-lock estimate error stayed within the lock tolerance.
    pub estimate_tight: bool,
    /// Positive fitted rate with r-squared at least 0.9, or the residual
    /// reached numerical zero.
    pub fit_strict: bool,
    /// Fallback: final residual below 1e-6 of the initial residual.
    pub fit_fallback: bool,
    /// Every occupancy stayed inside its box.
    pub box_ok: bool,
}

impl RunChecks {
    pub fn pass(&self) -> bool {
        self.locked && self.estimate_tight && (self.fit_strict || self.fit_fallback) && self.box_ok
    }
}

/// A finished run: the analysis summary, its verdict, and the raw
/// simulation output for callers that want to dig further.
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub checks: RunChecks,
    pub run: SimulationRun,
    pub csv_path: Option<PathBuf>,
}

/// Simulate one scenario, analyze it, and (optionally) write artifacts.
pub fn execute(scenario: &Scenario, opts: &RunOptions) -> Result<RunArtifacts> {
    let started = Instant::now();
    let run = simulate(scenario).with_context(|| format!("simulating `{}`", scenario.id))?;
    let truth = ParameterEstimate::from_truth(&scenario.params);

    let residuals = composite_residuals(&run.trajectory, &run.refs);
    let errors = estimate_errors(&run.trajectory, &truth);
    let lock = lock_time(&errors, opts.lock_tol);
    let fit = fit_exponential(&residuals, lock.unwrap_or(0));
    let post_lock_estimate_err = lock.map(|t| errors[t..].iter().copied().fold(0.0, f64::max));

    let samples = contraction_samples(
        &scenario.params,
        &run.refs.ctx.v_max,
        opts.contraction_points,
        scenario.seed ^ 0xC0_FFEE,
    );
    let estimated_c = contraction_margin(&scenario.params, &samples)?;
    let (m_bound, m_bound_note) =
        match recovery_gap_bound(&run.refs.ctx, &scenario.params.a, estimated_c) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        };

    let mut max_box_violation = f64::NEG_INFINITY;
    let mut box_ok = true;
    for x in run
        .trajectory
        .records
        .iter()
        .map(|r| r.x.as_slice())
        .chain(std::iter::once(run.trajectory.final_state.as_slice()))
    {
        for (i, &xi) in x.iter().enumerate() {
            max_box_violation = max_box_violation.max((xi - scenario.params.a[i]).max(-xi));
            box_ok &= 0.0 < xi && xi <= scenario.params.a[i];
        }
    }

    let initial_residual = residuals.first().copied().unwrap_or(0.0);
    let final_residual = residuals.last().copied().unwrap_or(0.0);
    let summary = RunSummary {
        id: scenario.id.clone(),
        horizon: scenario.horizon,
        lock_time: lock,
        fit: fit.clone(),
        post_lock_estimate_err,
        initial_residual,
        final_residual,
        estimated_c,
        m_bound,
        m_bound_note,
        max_recovery_gap: max_recovery_gap(&run.trajectory),
        max_box_violation,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };

    let fit_strict = match &fit {
        RateFit::Fitted {
            rate, r_squared, ..
        } => *rate > 0.0 && *r_squared >= 0.9,
        RateFit::Converged { .. } => true,
        RateFit::InsufficientData { .. } => false,
    };
    let checks = RunChecks {
        locked: lock.is_some(),
        estimate_tight: post_lock_estimate_err.map_or(false, |e| e <= opts.lock_tol),
        fit_strict,
        fit_fallback: final_residual < 1e-6 * initial_residual || final_residual <= ZERO_LEVEL,
        box_ok,
    };

    let csv_path = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating output dir {}", dir.display()))?;
            let path = dir.join(format!("{}.csv", scenario.id));
            let mut file = fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            csv_io::write_trajectory(
                &mut file,
                &run.trajectory,
                &run.refs.ctx.controlled,
                &run.refs.ctx.uncontrolled,
            )?;
            file.flush()?;
            if opts.plots {
                let title = &scenario.id;
                fs::write(
                    dir.join(format!("{title}_residual.svg")),
                    svg::residual_plot(&residuals, &format!("{title}: composite residual")),
                )?;
                fs::write(
                    dir.join(format!("{title}_density.svg")),
                    svg::density_heatmap(
                        &run.trajectory,
                        &scenario.params.a,
                        &format!("{title}: relative occupancy"),
                    ),
                )?;
                fs::write(
                    dir.join(format!("{title}_estimates.svg")),
                    svg::estimate_traces(
                        &run.trajectory,
                        &truth,
                        &format!("{title}: parameter estimates"),
                    ),
                )?;
            }
            Some(path)
        }
        None => None,
    };

    Ok(RunArtifacts {
        summary,
        checks,
        run,
        csv_path,
    })
}
