//! Nominal inflows, the uncongested equilibrium they induce, and the
//! selection of metered set points from parameter estimates.
//!
//! A full nominal inflow vector `v*` is feasible when, cell by cell, the
//! cumulative nominal flow
//!
//! ```text
//! lambda_1 = v*_1,    lambda_i = v*_i + (1 - p_exit_{i-1}) * lambda_{i-1}
//! ```
//!
//! stays strictly below `min(q_i, c_i (a_i - delta_i), r_i delta_i)`. Under
//! feasibility the freeway has a unique uncongested equilibrium with
//! occupancies `x*_i = lambda_i / r_i`, at which every cell runs on the
//! free-flow branch and no merge binds.
//!
//! The controller works from parameter estimates, not truth. Given an
//! estimate it picks set points for the metered inflows by inverting the
//! equilibrium relation at configured target occupancies (clamped into the
//! admissible metering box), then maps the combined inflow picture to the
//! equilibrium occupancies it implies, capped just inside the
//! low-occupancy box the observer needs to revisit.

use crate::observer::ParameterEstimate;
use crate::plant::FreewayParams;
use crate::scenario::ControlContext;
use crate::{Error, Result};

/// Margin used when checking the strict feasibility and cap inequalities,
/// so configurations on a floating-point knife edge are rejected instead of
/// flapping between runs.
pub const STRICTNESS_MARGIN: f64 = 1e-9;

/// Equilibrium-side configuration: nominal metered inflows, the
/// low-occupancy box, and the per-cell inflow caps.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumConfig {
    /// Nominal inflows of the metered cells, ascending by cell index.
    pub v_star_controlled: Vec<f64>,
    /// Upper edges `mu_i` in `(0, delta_i)` of the low-occupancy box the
    /// closed loop is steered into.
    pub mu: Vec<f64>,
    /// Caps `v_max_i` on every external inflow, metered or not.
    pub v_max: Vec<f64>,
    /// Target occupancies for the metered cells, ascending by cell index;
    /// defaults to the equilibrium occupancies induced by the configured
    /// nominal inflows.
    pub target_density: Option<Vec<f64>>,
}

impl EquilibriumConfig {
    /// Checks lengths and the constraints local to this struct; coupling
    /// with the controller gains is validated at the scenario level.
    pub fn validate(&self, params: &FreewayParams) -> Result<()> {
        let n = params.n();
        if self.v_star_controlled.len() != params.controlled.len() {
            return Err(Error::InvalidConfig(format!(
                "v_star_controlled has {} entries, expected {} (one per metered cell)",
                self.v_star_controlled.len(),
                params.controlled.len()
            )));
        }
        if self.mu.len() != n || self.v_max.len() != n {
            return Err(Error::InvalidConfig(format!(
                "mu and v_max must have {n} entries, got {} and {}",
                self.mu.len(),
                self.v_max.len()
            )));
        }
        for i in 0..n {
            if !(self.mu[i] > 0.0 && self.mu[i] < params.delta[i]) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: mu must lie in (0, delta) = (0, {}), got {}",
                    i + 1,
                    params.delta[i],
                    self.mu[i]
                )));
            }
            if !(self.v_max[i] > 0.0 && self.v_max[i].is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: v_max must be positive and finite, got {}",
                    i + 1,
                    self.v_max[i]
                )));
            }
        }
        if let Some(t) = &self.target_density {
            if t.len() != params.controlled.len() {
                return Err(Error::InvalidConfig(format!(
                    "target_density has {} entries, expected {}",
                    t.len(),
                    params.controlled.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-cell outcome of the feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeasibility {
    /// 1-based cell index.
    pub cell: usize,
    /// Cumulative nominal inflow reaching this cell.
    pub cumulative_inflow: f64,
    /// The binding bound `min(q, c (a - delta), r delta)`.
    pub bound: f64,
    /// Which of the three candidates the bound is.
    pub bound_kind: &'static str,
    /// Whether the cumulative inflow clears the bound with margin.
    pub feasible: bool,
}

/// Feasibility verdict for a full nominal inflow vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// One entry per cell, in order.
    pub cells: Vec<CellFeasibility>,
    /// True when every cell passes.
    pub feasible: bool,
}

impl std::fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.cells {
            writeln!(
                f,
                "cell {}: cumulative inflow {:.6} vs {} bound {:.6} -> {}",
                c.cell,
                c.cumulative_inflow,
                c.bound_kind,
                c.bound,
                if c.feasible { "ok" } else { "INFEASIBLE" }
            )?;
        }
        write!(
            f,
            "verdict: {}",
            if self.feasible {
                "feasible"
            } else {
                "infeasible"
            }
        )
    }
}

/// Cumulative nominal inflows `lambda_i` for a full inflow vector.
fn cumulative_inflows(params: &FreewayParams, v_star: &[f64]) -> Vec<f64> {
    let mut lambda = Vec::with_capacity(v_star.len());
    let mut acc = 0.0;
    for (i, &v) in v_star.iter().enumerate() {
        let base = if i == 0 {
            0.0
        } else {
            (1.0 - params.p_exit[i - 1]) * acc
        };
        acc = v + base;
        lambda.push(acc);
    }
    lambda
}

fn check_inflow_domain(params: &FreewayParams, v_star: &[f64]) -> Result<()> {
    if v_star.len() != params.n() {
        return Err(Error::Domain(format!(
            "inflow vector has {} entries, expected {}",
            v_star.len(),
            params.n()
        )));
    }
    if !(v_star[0] > 0.0) {
        return Err(Error::Domain(format!(
            "the external inflow of cell 1 must be strictly positive, got {}",
            v_star[0]
        )));
    }
    for (i, &v) in v_star.iter().enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!(
                "nominal inflow {} must be finite and >= 0, got {v}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Checks whether a full nominal inflow vector admits an uncongested
/// equilibrium, reporting the cumulative inflow, the binding bound, and the
/// verdict for every cell.
pub fn check_feasibility(params: &FreewayParams, v_star: &[f64]) -> Result<FeasibilityReport> {
    check_inflow_domain(params, v_star)?;
    let lambda = cumulative_inflows(params, v_star);
    let mut cells = Vec::with_capacity(params.n());
    let mut feasible = true;
    for i in 0..params.n() {
        let candidates = [
            (params.q[i], "max inflow"),
            (
                params.c[i] * (params.a[i] - params.delta[i]),
                "breakpoint supply",
            ),
            (params.r[i] * params.delta[i], "breakpoint demand"),
        ];
        let (bound, bound_kind) = candidates
            .into_iter()
            .reduce(|best, cand| if cand.0 < best.0 { cand } else { best })
            .unwrap();
        let ok = lambda[i] <= bound - STRICTNESS_MARGIN;
        feasible &= ok;
        cells.push(CellFeasibility {
            cell: i + 1,
            cumulative_inflow: lambda[i],
            bound,
            bound_kind,
            feasible: ok,
        });
    }
    Ok(FeasibilityReport { cells, feasible })
}

/// Equilibrium occupancies induced by a feasible full nominal inflow
/// vector: `x*_i = lambda_i / r_i`, all on the free-flow branch.
pub fn equilibrium_from_inflows(
    params: &FreewayParams,
    v_star: &[f64],
) -> Result<crate::plant::State> {
    let report = check_feasibility(params, v_star)?;
    if let Some(bad) = report.cells.iter().find(|c| !c.feasible) {
        return Err(Error::Infeasible {
            cell: bad.cell,
            cumulative: bad.cumulative_inflow,
            bound: bad.bound,
            bound_kind: bad.bound_kind,
        });
    }
    let lambda = cumulative_inflows(params, v_star);
    Ok(crate::plant::State(
        lambda
            .iter()
            .zip(&params.r)
            .map(|(l, r)| l / r)
            .collect(),
    ))
}

/// Sweeps the cells once, combining uncontrolled inflow estimates with
/// metered set points inverted from the target occupancies. Returns the
/// cumulative estimated inflows and the metered set points.
fn estimate_sweep(theta: &ParameterEstimate, ctx: &ControlContext) -> (Vec<f64>, Vec<f64>) {
    let mut lambda = Vec::with_capacity(ctx.n);
    let mut metered = Vec::with_capacity(ctx.controlled.len());
    let mut acc = 0.0;
    for i in 0..ctx.n {
        let base = if i == 0 {
            0.0
        } else {
            (1.0 - theta.p_exit[i - 1]) * acc
        };
        let v = match ctx.controlled_pos(i) {
            Some(pos) => {
                let raw = theta.r[i] * ctx.target_density[pos] - base;
                let v = raw.clamp(ctx.b[pos] + ctx.epsilon, ctx.v_max[i]);
                metered.push(v);
                v
            }
            None => theta.v_uncontrolled[ctx.uncontrolled_pos(i).expect("cell is unmetered")],
        };
        acc = v + base;
        lambda.push(acc);
    }
    (lambda, metered)
}

/// Picks set points for the metered inflows from a parameter estimate by
/// inverting the equilibrium relation at the configured target occupancies,
/// clamped into `[b + epsilon, v_max]` per metered cell.
///
/// When the estimate equals the truth and the targets are the induced
/// equilibrium occupancies, this returns the configured nominal inflows.
// TODO: add a max-throughput selection mode alongside target densities.
pub fn select_controlled_inflows(theta: &ParameterEstimate, ctx: &ControlContext) -> Vec<f64> {
    estimate_sweep(theta, ctx).1
}

/// Equilibrium picture implied by a parameter estimate: the occupancies the
/// combined (estimated + metered) inflows would settle at, capped at
/// `mu - epsilon` per cell, together with the metered set points.
pub fn estimated_equilibrium(
    theta: &ParameterEstimate,
    ctx: &ControlContext,
) -> (Vec<f64>, Vec<f64>) {
    let (lambda, metered) = estimate_sweep(theta, ctx);
    let occupancies = lambda
        .iter()
        .enumerate()
        .map(|(i, l)| (l / theta.r[i]).min(ctx.mu[i] - ctx.epsilon))
        .collect();
    (occupancies, metered)
}
