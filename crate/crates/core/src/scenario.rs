//! Scenario assembly: bundles the plant, equilibrium, and controller
//! configuration with initial data, checks every cross-field condition the
//! closed-loop guarantees rest on, and precomputes the reference
//! quantities (true equilibrium, equilibrium output, gain bound) that the
//! simulation and the analysis both need.

use crate::controller::{tau_bound, ControllerConfig};
use crate::equilibrium::{
    check_feasibility, equilibrium_from_inflows, EquilibriumConfig, STRICTNESS_MARGIN,
};
use crate::observer::ParameterEstimate;
use crate::plant::{step, Disturbance, FreewayParams, Output, State};
use crate::{Error, Result};

/// How the per-step merge priority weights are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbancePolicy {
    /// The same weights every step.
    Constant(Vec<f64>),
    /// Independent uniform draws in `[0, 1]` each step from one seeded
    /// stream.
    IidUniform,
    /// Uniform draws from a fresh stream per step (seed mixed with the
    /// step index), so single steps can be reproduced in isolation.
    PerStepSeeded,
    /// Independent fair coin flips between the two extreme priority
    /// rules (0 or 1) each step.
    AdversarialExtremes,
}

/// A complete simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Identifier echoed into reports and file names.
    pub id: String,
    pub params: FreewayParams,
    pub equilibrium: EquilibriumConfig,
    pub controller: ControllerConfig,
    /// Initial occupancies, one per cell, in `(0, a_i]`.
    pub x0: Vec<f64>,
    /// Initial parameter estimate; defaults to the parameter-box center.
    pub theta_hat0: Option<ParameterEstimate>,
    /// Initial stored measurement; defaults to the measurement a plant
    /// step from `x0` would produce (without advancing the state).
    pub w0: Option<Output>,
    /// Number of steps to simulate.
    pub horizon: usize,
    pub policy: DisturbancePolicy,
    /// Seed for the disturbance stream (unused by `Constant`).
    pub seed: u64,
}

/// Everything the controller and observer need at run time, flattened out
/// of the three configuration structs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlContext {
    pub n: usize,
    /// Metered cells, sorted ascending, 0-based.
    pub controlled: Vec<usize>,
    /// The complementary cells, sorted ascending.
    pub uncontrolled: Vec<usize>,
    pub epsilon: f64,
    pub mu: Vec<f64>,
    pub v_max: Vec<f64>,
    /// Metering floors, aligned with `controlled`.
    pub b: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    /// Target occupancies for the metered cells, aligned with
    /// `controlled`.
    pub target_density: Vec<f64>,
}

impl ControlContext {
    /// Flattens the configuration structs; expects pre-validated inputs.
    pub fn assemble(
        params: &FreewayParams,
        eq: &EquilibriumConfig,
        ctrl: &ControllerConfig,
        target_density: Vec<f64>,
    ) -> Self {
        ControlContext {
            n: params.n(),
            controlled: params.controlled.clone(),
            uncontrolled: params.uncontrolled_cells().collect(),
            epsilon: params.epsilon,
            mu: eq.mu.clone(),
            v_max: eq.v_max.clone(),
            b: ctrl.b.clone(),
            sigma: ctrl.sigma,
            tau: ctrl.tau,
            target_density,
        }
    }

    /// Position of a cell in the metered list, if it is metered.
    pub fn controlled_pos(&self, cell: usize) -> Option<usize> {
        self.controlled.binary_search(&cell).ok()
    }

    /// Position of a cell in the unmetered list, if it is unmetered.
    pub fn uncontrolled_pos(&self, cell: usize) -> Option<usize> {
        self.uncontrolled.binary_search(&cell).ok()
    }
}

/// Validated scenario with the derived reference quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRefs {
    pub ctx: ControlContext,
    /// Full nominal inflow vector, metered and unmetered merged.
    pub v_star_full: Vec<f64>,
    /// True equilibrium occupancies.
    pub x_star: Vec<f64>,
    /// Measurement at the equilibrium (identical for every priority
    /// weight).
    pub y_star: Output,
    pub theta_true: ParameterEstimate,
    /// Largest admissible saturation gain for this configuration.
    pub tau_bound: f64,
    /// Non-fatal observations (e.g. razor-thin recovery margins).
    pub warnings: Vec<String>,
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

impl Scenario {
    /// Merges the metered nominal inflows with the unmetered ones into a
    /// full vector; expects validated lengths.
    pub fn v_star_full(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.params.n()];
        for (pos, &cell) in self.params.controlled.iter().enumerate() {
            v[cell] = self.equilibrium.v_star_controlled[pos];
        }
        for (pos, cell) in self.params.uncontrolled_cells().enumerate() {
            v[cell] = self.params.v_star_uncontrolled[pos];
        }
        v
    }

    /// Checks the whole configuration: per-struct constraints, the
    /// feasibility of the nominal inflows, the low-occupancy box
    /// conditions the recovery argument needs, and the controller gain
    /// bound. Returns the derived reference quantities on success.
    pub fn validate(&self) -> Result<ScenarioRefs> {
        let params = &self.params;
        let eq = &self.equilibrium;
        let ctrl = &self.controller;
        params.validate()?;
        eq.validate(params)?;
        let n = params.n();
        let eps = params.epsilon;
        let mut warnings = Vec::new();

        if !(ctrl.sigma > 0.0 && ctrl.sigma < 1.0) {
            return Err(invalid(format!(
                "sigma must lie in (0, 1), got {}",
                ctrl.sigma
            )));
        }
        if ctrl.b.len() != params.controlled.len() {
            return Err(invalid(format!(
                "b has {} entries, expected {} (one per metered cell)",
                ctrl.b.len(),
                params.controlled.len()
            )));
        }
        for (pos, &cell) in params.controlled.iter().enumerate() {
            let b = ctrl.b[pos];
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(format!(
                    "cell {}: metering floor must be positive and finite, got {b}",
                    cell + 1
                )));
            }
            if eq.v_max[cell] < b + eps {
                return Err(invalid(format!(
                    "cell {}: the metering interval [b + epsilon, v_max] = [{}, {}] is empty",
                    cell + 1,
                    b + eps,
                    eq.v_max[cell]
                )));
            }
            let v = eq.v_star_controlled[pos];
            if !(v >= b + eps && v <= eq.v_max[cell]) {
                return Err(invalid(format!(
                    "cell {}: nominal metered inflow {v} must lie in [b + epsilon, v_max] = [{}, {}]",
                    cell + 1,
                    b + eps,
                    eq.v_max[cell]
                )));
            }
        }
        for (pos, cell) in params.uncontrolled_cells().enumerate() {
            let v = params.v_star_uncontrolled[pos];
            if v > eq.v_max[cell] {
                return Err(invalid(format!(
                    "cell {}: nominal inflow {v} exceeds its cap v_max = {}",
                    cell + 1,
                    eq.v_max[cell]
                )));
            }
        }

        // Feasibility of the nominal inflows (uncongested equilibrium
        // exists) and its location inside the capped low-occupancy box.
        let v_star_full = self.v_star_full();
        let report = check_feasibility(params, &v_star_full)?;
        if let Some(bad) = report.cells.iter().find(|c| !c.feasible) {
            return Err(Error::Infeasible {
                cell: bad.cell,
                cumulative: bad.cumulative_inflow,
                bound: bad.bound,
                bound_kind: bad.bound_kind,
            });
        }
        let x_star = equilibrium_from_inflows(params, &v_star_full)?.0;
        for i in 0..n {
            let cap = eq.mu[i] - eps;
            if x_star[i] > cap + 1e-12 {
                return Err(invalid(format!(
                    "cell {}: equilibrium occupancy {} exceeds mu - epsilon = {cap}; \
                     raise mu or lower the nominal inflows",
                    i + 1,
                    x_star[i]
                )));
            }
            if cap - x_star[i] < 1e-3 {
                warnings.push(format!(
                    "cell {}: equilibrium occupancy {} sits within 1e-3 of the cap {cap}; \
                     recovery margins will be thin",
                    i + 1,
                    x_star[i]
                ));
            }
        }

        // Inflow caps small enough that a capped inflow can never congest
        // a cell whose upstream neighbour is still in the box.
        for i in 0..n {
            let upstream = if i == 0 {
                0.0
            } else {
                (1.0 - params.p_exit[i - 1]) * params.r[i - 1] * eq.mu[i - 1]
            };
            let bound = params.q[i].min(params.c[i] * (params.a[i] - eq.mu[i]));
            if !(eq.v_max[i] + upstream <= bound - STRICTNESS_MARGIN) {
                return Err(invalid(format!(
                    "cell {}: v_max + worst-case upstream flow = {} must stay below \
                     min(q, c (a - mu)) = {bound}",
                    i + 1,
                    eq.v_max[i] + upstream
                )));
            }
        }

        // Controller gain bound and the remaining scalar checks.
        let target_density = match &eq.target_density {
            Some(t) => {
                for (pos, &cell) in params.controlled.iter().enumerate() {
                    if !(t[pos] > 0.0 && t[pos] <= eq.mu[cell] - eps) {
                        return Err(invalid(format!(
                            "cell {}: target occupancy {} must lie in (0, mu - epsilon]",
                            cell + 1,
                            t[pos]
                        )));
                    }
                }
                t.clone()
            }
            None => params.controlled.iter().map(|&i| x_star[i]).collect(),
        };
        let ctx = ControlContext::assemble(params, eq, ctrl, target_density);
        let bound = tau_bound(&ctx);
        if !(ctrl.tau > 0.0 && ctrl.tau <= bound) {
            return Err(invalid(format!(
                "tau = {} must lie in (0, {bound}]; larger gains break the \
                 outside-the-box saturation argument",
                ctrl.tau
            )));
        }

        // Initial data.
        let x0 = State(self.x0.clone());
        x0.check_admissible(params)?;
        if let Some(theta) = &self.theta_hat0 {
            check_estimate_in_box(theta, params, &eq.v_max)?;
        }
        if let Some(w) = &self.w0 {
            check_measurement_shape(w, params)?;
        }
        if let DisturbancePolicy::Constant(d) = &self.policy {
            Disturbance(d.clone()).check_admissible(params)?;
        }

        // Reference measurement: at the equilibrium no merge binds, so the
        // output is the same for every priority weight.
        let (_, y_star) = step(
            params,
            &State(x_star.clone()),
            &v_star_full,
            &Disturbance(vec![0.5; n - 1]),
        )?;

        Ok(ScenarioRefs {
            theta_true: ParameterEstimate::from_truth(params),
            ctx,
            v_star_full,
            x_star,
            y_star,
            tau_bound: bound,
            warnings,
        })
    }
}

/// Checks that an estimate lies in the known parameter box.
pub fn check_estimate_in_box(
    theta: &ParameterEstimate,
    params: &FreewayParams,
    v_max: &[f64],
) -> Result<()> {
    let n = params.n();
    let eps = params.epsilon;
    if theta.p_exit.len() != n - 1
        || theta.r.len() != n
        || theta.v_uncontrolled.len() != n - params.controlled.len()
    {
        return Err(invalid(format!(
            "estimate blocks have lengths ({}, {}, {}), expected ({}, {}, {})",
            theta.p_exit.len(),
            theta.v_uncontrolled.len(),
            theta.r.len(),
            n - 1,
            n - params.controlled.len(),
            n
        )));
    }
    for (k, &p) in theta.p_exit.iter().enumerate() {
        if !(0.0..=1.0 - eps).contains(&p) {
            return Err(invalid(format!(
                "estimated exit probability {} = {p} outside [0, 1 - epsilon]",
                k + 1
            )));
        }
    }
    for (i, &r) in theta.r.iter().enumerate() {
        if !(eps..=1.0 - eps).contains(&r) {
            return Err(invalid(format!(
                "estimated demand slope {} = {r} outside [epsilon, 1 - epsilon]",
                i + 1
            )));
        }
    }
    for (pos, cell) in params.uncontrolled_cells().enumerate() {
        let v = theta.v_uncontrolled[pos];
        if !(v >= 0.0 && v <= v_max[cell]) {
            return Err(invalid(format!(
                "estimated inflow of cell {} = {v} outside [0, v_max]",
                cell + 1
            )));
        }
    }
    Ok(())
}

/// Checks dimensions and ranges of a stored measurement.
pub fn check_measurement_shape(w: &Output, params: &FreewayParams) -> Result<()> {
    let n = params.n();
    w.x.check_admissible(params)?;
    if w.q_out.len() != n || w.q_link.len() != n - 1 {
        return Err(invalid(format!(
            "measurement flow blocks have lengths ({}, {}), expected ({}, {})",
            w.q_out.len(),
            w.q_link.len(),
            n,
            n - 1
        )));
    }
    for (label, flows) in [("off-ramp", &w.q_out), ("link", &w.q_link)] {
        for (k, &f) in flows.iter().enumerate() {
            if !(f.is_finite() && f >= 0.0) {
                return Err(invalid(format!(
                    "{label} flow {} must be finite and >= 0, got {f}",
                    k + 1
                )));
            }
        }
    }
    Ok(())
}
