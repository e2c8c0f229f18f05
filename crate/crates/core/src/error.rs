use thiserror::Error;

/// Errors surfaced by configuration validation and the simulation kernel.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter set or scenario failed structural validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An argument left the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A nominal inflow pattern admits no uncongested equilibrium.
    #[error("infeasible nominal inflow at cell {cell}: cumulative demand {cumulative} is not below the {bound_kind} bound {bound}")]
    Infeasible {
        /// 1-based index of the first cell whose bound is violated.
        cell: usize,
        /// Cumulative nominal inflow reaching that cell.
        cumulative: f64,
        /// Value of the violated bound.
        bound: f64,
        /// Human-readable name of the violated bound.
        bound_kind: &'static str,
    },

    /// The parameter-recovery map was applied to a window outside the
    /// recovery set; callers must guard with `in_recovery_set` first.
    #[error("recovery map applied outside the recovery set: {0}")]
    OutsideRecoverySet(String),

    /// The inflow floors and caps are too large for the requested
    /// recurrence bound to exist at the given contraction rate.
    #[error("recurrence bound unavailable: weighted inflow budget {kappa} must be below {threshold} (contraction rate {rate}); reduce the metering floors or the uncontrolled inflow caps")]
    RecurrenceBoundUnavailable {
        /// Weighted per-step inflow budget under full saturation.
        kappa: f64,
        /// Largest budget the contraction rate can absorb.
        threshold: f64,
        /// Contraction rate used for the bound.
        rate: f64,
    },

    /// A state update left the admissible box; reported rather than clamped
    /// so that model errors are never silently repaired.
    #[error("state invariance violated at cell {cell}: occupancy {value} outside (0, {cap}]")]
    InvarianceViolated {
        /// 1-based index of the offending cell.
        cell: usize,
        /// Offending occupancy value.
        value: f64,
        /// Storage capacity of that cell.
        cap: f64,
    },
}
