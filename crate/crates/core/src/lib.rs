//! Discrete-time freeway simulation with adaptive ramp metering.
//!
//! The library models a freeway as a chain of `n >= 3` cells with one
//! external inflow per cell (the upstream mainline feed for cell 1, on-ramps
//! elsewhere), per-cell off-ramp splits, and first-order demand/supply flow
//! exchange between neighbours. A subset of the external inflows is metered
//! by a saturated feedback law that steers the freeway to an uncongested
//! equilibrium; the remaining inflows, the off-ramp splits, and the demand
//! slopes are unknown to the controller and are recovered exactly — in
//! finitely many steps — by a dead-beat observer that watches occupancies
//! and flows.
//!
//! Module map:
//!
//! * [`plant`] — cell parameters, demand/supply curves, priority split at
//!   merges, and the one-step state transition with flow measurements.
//! * [`equilibrium`] — feasibility of nominal inflows, the induced
//!   uncongested equilibrium, and the selection of metered set points from
//!   parameter estimates.
//! * [`controller`] — the weighted-overshoot penalty and the saturated
//!   metering law built on it.
//! * [`observer`] — the recovery test, the exact one-step parameter
//!   recovery map, and the dead-beat update (both the freeway-specific form
//!   and the generic window/hold scheme it instantiates).
//! * [`scenario`] — run configuration, cross-field validation, and the
//!   disturbance policies.
//! * [`closed_loop`] — the metered simulation loop, trajectory records, and
//!   the contraction/recurrence diagnostics.

pub mod closed_loop;
pub mod controller;
pub mod equilibrium;
mod error;
pub mod observer;
pub mod plant;
pub mod scenario;
#[cfg(test)]
mod test_util;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
