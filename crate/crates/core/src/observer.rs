//! Dead-beat parameter identification from one step of measurements.
//!
//! The identifier keeps the previous measurement as a one-deep window `w`
//! and holds its estimate until `w` lands in the recovery set: occupancies
//! strictly inside the low-occupancy box and every mainline link carrying
//! flow. On such a step the plant is provably uncongested and un-split, so
//! the unknown parameters appear linearly in the measurements and are
//! recovered exactly in closed form — the estimate is pinned to the truth
//! from then on rather than approached asymptotically.
//!
//! [`deadbeat_update`] is the scheme in the abstract (any window depth, any
//! estimate type); the rest of the module instantiates it for the freeway.

use crate::plant::{FreewayParams, Output};
use crate::scenario::ControlContext;
use crate::{Error, Result};

/// Estimate of the unknown plant parameters: exit probabilities, demand
/// slopes, and the uncontrolled external inflows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    /// Estimated off-ramp exit probabilities, one per mainline link.
    pub p_exit: Vec<f64>,
    /// Estimated external inflows of the unmetered cells, ascending by
    /// cell index.
    pub v_uncontrolled: Vec<f64>,
    /// Estimated free-flow demand slopes, one per cell.
    pub r: Vec<f64>,
}

impl ParameterEstimate {
    /// The true parameters, for seeding oracles and measuring estimation
    /// error.
    pub fn from_truth(params: &FreewayParams) -> Self {
        ParameterEstimate {
            p_exit: params.p_exit.clone(),
            v_uncontrolled: params.v_star_uncontrolled.clone(),
            r: params.r.clone(),
        }
    }

    /// Center of the parameter box: the natural uninformed initial
    /// estimate.
    pub fn box_center(params: &FreewayParams, v_max: &[f64]) -> Self {
        ParameterEstimate {
            p_exit: vec![(1.0 - params.epsilon) / 2.0; params.n() - 1],
            v_uncontrolled: params
                .uncontrolled_cells()
                .map(|i| v_max[i] / 2.0)
                .collect(),
            r: vec![0.5; params.n()],
        }
    }

    /// Largest absolute component-wise deviation from another estimate.
    pub fn max_abs_distance(&self, other: &ParameterEstimate) -> f64 {
        let blocks = [
            (&self.p_exit, &other.p_exit),
            (&self.v_uncontrolled, &other.v_uncontrolled),
            (&self.r, &other.r),
        ];
        let mut worst = 0.0f64;
        for (a, b) in blocks {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

/// Identifier state: the stored previous measurement, the running
/// estimate, and whether an exact recovery has happened yet.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    /// Previous measurement (the one-deep window).
    pub window: Output,
    /// Current parameter estimate.
    pub theta_hat: ParameterEstimate,
    /// True once the window has entered the recovery set at least once,
    /// i.e. the estimate is exact from here on.
    pub recovered: bool,
}

impl ObserverState {
    pub fn new(window: Output, theta_hat: ParameterEstimate) -> Self {
        ObserverState {
            window,
            theta_hat,
            recovered: false,
        }
    }
}

/// Whether a stored measurement certifies an uncongested, fully-served
/// step: occupancies strictly inside `(0, mu)` and positive flow on every
/// mainline link. Comparisons are exact; the closed loop earns the margins.
pub fn in_recovery_set(w: &Output, mu: &[f64]) -> bool {
    let n = w.x.len();
    for i in 0..n {
        if !(w.x[i] > 0.0 && w.x[i] < mu[i]) {
            return false;
        }
    }
    for k in 0..n - 1 {
        if !(w.q_out[k] + w.q_link[k] > 0.0) {
            return false;
        }
    }
    true
}

/// Closed-form recovery, assuming the window is in the recovery set.
///
/// On an uncongested, un-split step the measured flows factor the served
/// demand, so the split probabilities and demand slopes read off directly,
/// and the per-cell mass balance inverts for the uncontrolled inflows:
///
/// ```text
/// p_k = q_out_k / (q_out_k + q_link_k)
/// r_i = (q_out_i + q_link_i) / x_i        (last cell: q_out_n / x_n)
/// v_i = x_i' - x_i + outflow_i - q_link_{i-1}
/// ```
///
/// where `x'` are the occupancies measured one step later. Estimates are
/// clamped into the known parameter box, which the exact values already
/// inhabit.
fn recover_unchecked(y: &Output, w: &Output, ctx: &ControlContext) -> ParameterEstimate {
    let n = ctx.n;
    let eps = ctx.epsilon;
    let mut p_exit = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let served = w.q_out[k] + w.q_link[k];
        p_exit.push((w.q_out[k] / served).min(1.0 - eps));
    }
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let sent = if i < n - 1 {
            w.q_out[i] + w.q_link[i]
        } else {
            w.q_out[i]
        };
        r.push((sent / w.x[i]).clamp(eps, 1.0 - eps));
    }
    let mut v_uncontrolled = Vec::with_capacity(ctx.uncontrolled.len());
    for &i in &ctx.uncontrolled {
        let sent = if i < n - 1 {
            w.q_out[i] + w.q_link[i]
        } else {
            w.q_out[i]
        };
        let upstream = if i == 0 { 0.0 } else { w.q_link[i - 1] };
        let v = y.x[i] - w.x[i] + sent - upstream;
        v_uncontrolled.push(v.clamp(0.0, ctx.v_max[i]));
    }
    ParameterEstimate {
        p_exit,
        v_uncontrolled,
        r,
    }
}

/// Recovers the parameters from the current measurement `y` and the stored
/// previous one `w`; errors unless `w` is in the recovery set.
pub fn recover_parameters(
    y: &Output,
    w: &Output,
    ctx: &ControlContext,
) -> Result<ParameterEstimate> {
    if !in_recovery_set(w, &ctx.mu) {
        return Err(Error::OutsideRecoverySet(
            "stored measurement is outside the recovery set; the estimate must be held".into(),
        ));
    }
    Ok(recover_unchecked(y, w, ctx))
}

/// One identifier transition: recover if the stored window is in the
/// recovery set, otherwise hold; either way the window advances to the new
/// measurement. Returns whether the recovery fired.
pub fn observer_update(state: &mut ObserverState, y: &Output, ctx: &ControlContext) -> bool {
    let fired = in_recovery_set(&state.window, &ctx.mu);
    if fired {
        state.theta_hat = recover_unchecked(y, &state.window, ctx);
        state.recovered = true;
    }
    state.window = y.clone();
    fired
}

/// One transition of the dead-beat scheme in the abstract, for any
/// measurement type, estimate type, and window depth: if the stored window
/// is in the recovery set, the recovery map pins the estimate; otherwise
/// the estimate holds. The window then shifts forward with the newest
/// measurement at index 0. Returns whether the recovery fired.
pub fn deadbeat_update<Y: Clone, T>(
    window: &mut [Y],
    theta_hat: &mut T,
    y: &Y,
    in_recovery_set: impl FnOnce(&[Y]) -> bool,
    recover: impl FnOnce(&Y, &[Y]) -> T,
) -> bool {
    let fired = in_recovery_set(window);
    if fired {
        *theta_hat = recover(y, window);
    }
    window.rotate_right(1);
    window[0] = y.clone();
    fired
}
