//! Cell-chain freeway model: demand/supply curves, merge priorities, and the
//! one-step state transition.
//!
//! The freeway is a chain of `n >= 3` cells. Cell `i` (0-based here; the
//! docs below write the human 1-based index where it reads better) holds an
//! occupancy `x_i` in `(0, a_i]`. Each step, cell `i` offers the demand
//! `f_i(x_i)` to its downstream neighbour, receives at most its supply
//! `min(q_i, c_i (a_i - x_i))`, and admits an external inflow `v_i` (the
//! upstream mainline feed for the first cell, an on-ramp elsewhere). A
//! fraction `p_exit_i` of what cell `i` sends downstream leaves at an
//! off-ramp; everything the last cell sends leaves the freeway.
//!
//! When the demand entering a cell exceeds its supply, the shortfall is
//! split between the mainline and the ramp by a priority weight `d` in
//! `[0, 1]` (an exogenous, per-step disturbance): the fraction of upstream
//! demand actually served is
//!
//! ```text
//! s = (1 - d) * min(1, max(0, (supply - v) / link_demand))
//!     + d * min(1, supply / link_demand)
//! ```
//!
//! with `link_demand = (1 - p_exit) * f(x_upstream)`. At `d = 0` the ramp
//! has absolute priority, at `d = 1` the mainline does. Total admitted
//! inflow is `min(q, c (a - x), v + link_demand)` in every case, so the
//! split never changes how much a cell receives, only where it comes from.
//!
//! One step maps `x(t)` to `x(t+1)` and also produces the measurement
//! `y(t)`: the pre-step occupancies together with the off-ramp flows
//! `q_out` and the cell-to-cell flows `q_link` realised during the step.
//! Those flows are exactly what the dead-beat observer needs to invert the
//! transition.

use crate::{Error, Result};

/// Shape of the demand curve beyond the free-flow breakpoint.
///
/// Below the breakpoint `delta` the demand is the line `r * z`. Past it the
/// model only requires a value in `[f_min, r * delta]`; the two shapes
/// shipped here are the common extremes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CongestedShape {
    /// Demand stays pinned at the breakpoint value `r * delta`.
    ConstantAtCapacity,
    /// Demand falls linearly from `r * delta` at the breakpoint to `f_min`
    /// at the storage capacity `a`.
    LinearDropToMin,
}

/// Physical description of the cell chain plus the quantities the
/// controller treats as unknown: exit splits, demand slopes, and the
/// uncontrolled nominal inflows.
#[derive(Debug, Clone, PartialEq)]
pub struct FreewayParams {
    /// Storage capacity `a_i > 0` of each cell.
    pub a: Vec<f64>,
    /// Maximum admissible inflow `q_i > 0` of each cell.
    pub q: Vec<f64>,
    /// Supply slope `c_i` in `(0, 1]` of each cell.
    pub c: Vec<f64>,
    /// Free-flow breakpoint `delta_i` in `(0, a_i]` of each cell.
    pub delta: Vec<f64>,
    /// Demand slope `r_i` in `[epsilon, 1 - epsilon]` of each cell.
    pub r: Vec<f64>,
    /// Congested demand floor `f_min_i` in `(0, r_i * delta_i]`.
    pub f_min: Vec<f64>,
    /// Congested branch shape of each cell's demand curve.
    pub shape: Vec<CongestedShape>,
    /// Off-ramp split `p_exit_i` in `[0, 1 - epsilon]` for cells `1..n-1`
    /// (1-based); the last cell has no off-ramp entry because all of its
    /// outflow leaves the freeway.
    pub p_exit: Vec<f64>,
    /// 0-based indices of the metered external inflows, sorted ascending.
    pub controlled: Vec<usize>,
    /// Nominal inflows of the unmetered cells, ascending by cell index.
    /// These are part of the plant truth the observer must recover.
    pub v_star_uncontrolled: Vec<f64>,
    /// Regularity margin in `(0, 1/2)` bounding slopes and exit splits away
    /// from the degenerate values 0 and 1.
    pub epsilon: f64,
}

impl FreewayParams {
    /// Number of cells.
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Whether the external inflow of 0-based cell `i` is metered.
    pub fn is_controlled(&self, i: usize) -> bool {
        self.controlled.binary_search(&i).is_ok()
    }

    /// 0-based indices of the unmetered cells, ascending.
    pub fn uncontrolled_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|i| !self.is_controlled(*i))
    }

    /// Checks lengths, ranges, and cross-field constraints that do not
    /// depend on the metering configuration.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 cells, got {n}"
            )));
        }
        let lens = [
            ("q", self.q.len()),
            ("c", self.c.len()),
            ("delta", self.delta.len()),
            ("r", self.r.len()),
            ("f_min", self.f_min.len()),
            ("shape", self.shape.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {len} entries, expected {n}"
                )));
            }
        }
        if self.p_exit.len() != n - 1 {
            return Err(Error::InvalidConfig(format!(
                "p_exit has {} entries, expected {}",
                self.p_exit.len(),
                n - 1
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1/2), got {}",
                self.epsilon
            )));
        }
        for i in 0..n {
            if !(self.a[i] > 0.0 && self.a[i].is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: storage capacity must be positive, got {}",
                    i + 1,
                    self.a[i]
                )));
            }
            if !(self.q[i] > 0.0 && self.q[i].is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: max inflow must be positive, got {}",
                    i + 1,
                    self.q[i]
                )));
            }
            if !(self.c[i] > 0.0 && self.c[i] <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: supply slope must lie in (0, 1], got {}",
                    i + 1,
                    self.c[i]
                )));
            }
            if !(self.delta[i] > 0.0 && self.delta[i] <= self.a[i]) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: breakpoint must lie in (0, a], got {}",
                    i + 1,
                    self.delta[i]
                )));
            }
            if !(self.r[i] >= self.epsilon && self.r[i] <= 1.0 - self.epsilon) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: demand slope must lie in [{}, {}], got {}",
                    i + 1,
                    self.epsilon,
                    1.0 - self.epsilon,
                    self.r[i]
                )));
            }
            let cap_demand = self.r[i] * self.delta[i];
            if !(self.f_min[i] > 0.0 && self.f_min[i] <= cap_demand) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: congested floor must lie in (0, r*delta] = (0, {cap_demand}], got {}",
                    i + 1,
                    self.f_min[i]
                )));
            }
        }
        for (k, p) in self.p_exit.iter().enumerate() {
            if !(*p >= 0.0 && *p <= 1.0 - self.epsilon) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: exit split must lie in [0, {}], got {p}",
                    k + 1,
                    1.0 - self.epsilon
                )));
            }
        }
        if self.controlled.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one inflow must be metered".into(),
            ));
        }
        if self.controlled.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "controlled cell indices must be sorted and unique".into(),
            ));
        }
        if *self.controlled.last().unwrap() >= n {
            return Err(Error::InvalidConfig(format!(
                "controlled cell index {} out of range (n = {n})",
                self.controlled.last().unwrap()
            )));
        }
        let uncontrolled: Vec<usize> = self.uncontrolled_cells().collect();
        if self.v_star_uncontrolled.len() != uncontrolled.len() {
            return Err(Error::InvalidConfig(format!(
                "v_star_uncontrolled has {} entries, expected {} (one per unmetered cell)",
                self.v_star_uncontrolled.len(),
                uncontrolled.len()
            )));
        }
        for (v, i) in self.v_star_uncontrolled.iter().zip(&uncontrolled) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: uncontrolled nominal inflow must be finite and >= 0, got {v}",
                    i + 1
                )));
            }
            if *i == 0 && *v <= 0.0 {
                return Err(Error::InvalidConfig(
                    "the external inflow of cell 1 must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-cell occupancies; admissible states have `x_i` in `(0, a_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct State(pub Vec<f64>);

impl State {
    /// Number of cells.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when the state holds no cells (never the case for valid runs).
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Occupancies as a slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks membership in the admissible box `(0, a_1] x ... x (0, a_n]`.
    pub fn check_admissible(&self, params: &FreewayParams) -> Result<()> {
        if self.len() != params.n() {
            return Err(Error::Domain(format!(
                "state has {} cells, expected {}",
                self.len(),
                params.n()
            )));
        }
        for (i, &x) in self.0.iter().enumerate() {
            if !(x > 0.0 && x <= params.a[i]) {
                return Err(Error::InvarianceViolated {
                    cell: i + 1,
                    value: x,
                    cap: params.a[i],
                });
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for State {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-boundary merge priority weights `d_i` in `[0, 1]`, one for each of
/// the `n - 1` cell-to-cell boundaries (entry `k` weighs the merge into
/// 0-based cell `k + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance(pub Vec<f64>);

impl Disturbance {
    /// Number of boundaries.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when there are no boundaries (never the case for valid runs).
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks length and range against the cell count.
    pub fn check_admissible(&self, params: &FreewayParams) -> Result<()> {
        if self.len() != params.n() - 1 {
            return Err(Error::Domain(format!(
                "disturbance has {} entries, expected {}",
                self.len(),
                params.n() - 1
            )));
        }
        for (k, &d) in self.0.iter().enumerate() {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Domain(format!(
                    "priority weight {} must lie in [0, 1], got {d}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Disturbance {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Measurement produced by one step: the pre-step occupancies and the flows
/// realised while moving to the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    /// Occupancies at the start of the step.
    pub x: State,
    /// Flow leaving the freeway at each cell: the off-ramp flow
    /// `p_exit_i * s_{i+1} * f_i(x_i)` for `i < n`, and the full outflow
    /// `f_n(x_n)` of the last cell.
    pub q_out: Vec<f64>,
    /// Flow crossing each of the `n - 1` cell boundaries:
    /// `(1 - p_exit_i) * s_{i+1} * f_i(x_i)`.
    pub q_link: Vec<f64>,
}

/// Demand a cell with occupancy `z` offers downstream.
///
/// Free-flow branch `r * z` on `[0, delta]`; past it the configured
/// congested shape, which stays within `[f_min, r * delta]`.
pub fn demand(params: &FreewayParams, cell: usize, z: f64) -> Result<f64> {
    if cell >= params.n() {
        return Err(Error::Domain(format!(
            "cell index {cell} out of range (n = {})",
            params.n()
        )));
    }
    if !(z >= 0.0 && z <= params.a[cell]) {
        return Err(Error::Domain(format!(
            "occupancy {z} outside [0, {}] for cell {}",
            params.a[cell],
            cell + 1
        )));
    }
    Ok(demand_unchecked(params, cell, z))
}

/// `demand` without domain checks; callers must guarantee `z` in `[0, a]`.
fn demand_unchecked(params: &FreewayParams, cell: usize, z: f64) -> f64 {
    let delta = params.delta[cell];
    let r = params.r[cell];
    if z <= delta {
        return r * z;
    }
    let cap = r * delta;
    match params.shape[cell] {
        CongestedShape::ConstantAtCapacity => cap,
        CongestedShape::LinearDropToMin => {
            // delta < z <= a implies delta < a, so the slope is well defined.
            let frac = (z - delta) / (params.a[cell] - delta);
            cap + frac * (params.f_min[cell] - cap)
        }
    }
}

/// Room a cell with occupancy `x` can accept this step:
/// `min(q, c * (a - x))`.
pub fn supply(params: &FreewayParams, cell: usize, x: f64) -> Result<f64> {
    if cell >= params.n() {
        return Err(Error::Domain(format!(
            "cell index {cell} out of range (n = {})",
            params.n()
        )));
    }
    if !(x >= 0.0 && x <= params.a[cell]) {
        return Err(Error::Domain(format!(
            "occupancy {x} outside [0, {}] for cell {}",
            params.a[cell],
            cell + 1
        )));
    }
    Ok(supply_unchecked(params, cell, x))
}

fn supply_unchecked(params: &FreewayParams, cell: usize, x: f64) -> f64 {
    params.q[cell].min(params.c[cell] * (params.a[cell] - x))
}

/// Fraction of the upstream demand into `receiving` (0-based, `>= 1`) that
/// is actually served, given the ramp inflow `v` into that cell and the
/// priority weight `d`.
///
/// Returns exactly 1 whenever the total demand fits under the supply, so
/// the unbinding case is independent of `d` bit for bit.
pub fn priority_fraction(
    params: &FreewayParams,
    receiving: usize,
    x: &State,
    v: f64,
    d: f64,
) -> Result<f64> {
    if receiving == 0 || receiving >= params.n() {
        return Err(Error::Domain(format!(
            "receiving cell must lie in 1..{}, got {receiving}",
            params.n()
        )));
    }
    let up = receiving - 1;
    let f_up = demand(params, up, x[up])?;
    let sup = supply(params, receiving, x[receiving])?;
    let link_demand = (1.0 - params.p_exit[up]) * f_up;
    Ok(split_fraction(sup, v, link_demand, d))
}

/// Core of the merge split. `link_demand > 0` is guaranteed for admissible
/// states because occupancies and demand slopes are positive and exit
/// splits stay below 1.
fn split_fraction(sup: f64, v: f64, link_demand: f64, d: f64) -> f64 {
    if v + link_demand <= sup {
        // No binding: both branches of the blend evaluate to 1, so skip the
        // arithmetic entirely and keep this path exact and d-free.
        return 1.0;
    }
    let ramp_first = ((sup - v) / link_demand).clamp(0.0, 1.0);
    let mainline_first = (sup / link_demand).min(1.0);
    (1.0 - d) * ramp_first + d * mainline_first
}

/// Advances the freeway one step.
///
/// `v` holds all `n` external inflows for this step (metered or not), `d`
/// the merge priorities. Returns the next state together with the
/// measurement taken over the step: pre-step occupancies, off-ramp flows,
/// and boundary flows.
pub fn step(
    params: &FreewayParams,
    x: &State,
    v: &[f64],
    d: &Disturbance,
) -> Result<(State, Output)> {
    let n = params.n();
    x.check_admissible(params)?;
    d.check_admissible(params)?;
    if v.len() != n {
        return Err(Error::Domain(format!(
            "inflow vector has {} entries, expected {n}",
            v.len()
        )));
    }
    if !(v[0] > 0.0) {
        return Err(Error::Domain(format!(
            "the external inflow of cell 1 must be strictly positive, got {}",
            v[0]
        )));
    }
    for (i, &vi) in v.iter().enumerate() {
        if !(vi.is_finite() && vi >= 0.0) {
            return Err(Error::Domain(format!(
                "inflow {} must be finite and >= 0, got {vi}",
                i + 1
            )));
        }
    }

    let demands: Vec<f64> = (0..n).map(|i| demand_unchecked(params, i, x[i])).collect();
    let supplies: Vec<f64> = (0..n).map(|i| supply_unchecked(params, i, x[i])).collect();

    // Boundary k carries flow from cell k into cell k+1.
    let mut q_link = vec![0.0; n - 1];
    let mut q_out = vec![0.0; n];
    let mut sent = vec![0.0; n]; // s_{i+1} * f_i, the demand actually served
    for k in 0..n - 1 {
        let link_demand = (1.0 - params.p_exit[k]) * demands[k];
        let s = split_fraction(supplies[k + 1], v[k + 1], link_demand, d[k]);
        let served = s * demands[k];
        sent[k] = served;
        q_out[k] = params.p_exit[k] * served;
        q_link[k] = (1.0 - params.p_exit[k]) * served;
    }
    sent[n - 1] = demands[n - 1];
    q_out[n - 1] = demands[n - 1];

    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let inflow = if i == 0 {
            supplies[0].min(v[0])
        } else {
            // Total admitted inflow; the priority split only decides the
            // ramp/mainline composition, not the amount.
            let link_demand = (1.0 - params.p_exit[i - 1]) * demands[i - 1];
            supplies[i].min(v[i] + link_demand)
        };
        next.push(x[i] - sent[i] + inflow);
    }

    let next = State(next);
    next.check_admissible(params)?;
    Ok((
        next,
        Output {
            x: x.clone(),
            q_out,
            q_link,
        },
    ))
}
