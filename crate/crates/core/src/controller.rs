//! Saturated proportional metering around estimated set points.
//!
//! The metered command for cell `i` is
//!
//! ```text
//! u_i = max(b_i, v_hat_i - (v_hat_i - b_i) * overshoot(x) / tau)
//! ```
//!
//! where `overshoot` aggregates how far the occupancies sit above the
//! estimated equilibrium, weighted geometrically so upstream congestion
//! dominates. The gain `tau` is small enough that any occupancy outside the
//! low-occupancy box drives every command exactly to its floor `b_i`;
//! inside the box the command interpolates between the floor and the set
//! point and reaches the set point exactly at (or below) the estimated
//! equilibrium.

use crate::plant::State;
use crate::scenario::ControlContext;

/// Controller-side configuration: decay rate, saturation gain, and the
/// metering floors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Geometric weight `sigma` in `(0, 1)` of the overshoot aggregate.
    pub sigma: f64,
    /// Saturation gain; must not exceed [`tau_bound`] for the scheme's
    /// outside-the-box saturation argument to hold.
    pub tau: f64,
    /// Metering floors `b_i > 0` of the metered cells, ascending by cell
    /// index.
    pub b: Vec<f64>,
}

/// Largest admissible saturation gain,
/// `epsilon^2 sigma^n / max_i (v_max_i - b_i)` over the metered cells.
pub fn tau_bound(ctx: &ControlContext) -> f64 {
    let spread = ctx
        .controlled
        .iter()
        .enumerate()
        .map(|(pos, &cell)| ctx.v_max[cell] - ctx.b[pos])
        .fold(f64::NEG_INFINITY, f64::max);
    ctx.epsilon * ctx.epsilon * ctx.sigma.powi(ctx.n as i32) / spread
}

/// Weighted aggregate of how far the occupancies exceed the estimated
/// equilibrium: `sum_i sigma^(i+1) * max(0, x_i - x_hat_i)` with the sum
/// over 0-based cells.
pub fn overshoot(x: &State, x_hat: &[f64], sigma: f64) -> f64 {
    let mut acc = 0.0;
    let mut weight = 1.0;
    for (xi, xh) in x.0.iter().zip(x_hat) {
        weight *= sigma;
        acc += weight * (xi - xh).max(0.0);
    }
    acc
}

/// Metered commands from precomputed set points and overshoot. Exposed
/// separately so the closed loop can reuse the parts it already computed.
pub fn control_from_parts(v_hat: &[f64], overshoot: f64, ctx: &ControlContext) -> Vec<f64> {
    v_hat
        .iter()
        .zip(&ctx.b)
        .map(|(&v, &b)| b.max(v - (v - b) * overshoot / ctx.tau))
        .collect()
}

/// Metered commands for the current occupancies under a parameter
/// estimate: set points and estimated equilibrium from the estimate, then
/// the saturated interpolation toward the floors.
pub fn control(
    theta: &crate::observer::ParameterEstimate,
    x: &State,
    ctx: &ControlContext,
) -> Vec<f64> {
    let (x_hat, v_hat) = crate::equilibrium::estimated_equilibrium(theta, ctx);
    control_from_parts(&v_hat, overshoot(x, &x_hat, ctx.sigma), ctx)
}
