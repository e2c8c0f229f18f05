//! Shared fixtures for unit tests: the 3-cell reference instance used
//! throughout the crate's examples.

use crate::controller::ControllerConfig;
use crate::equilibrium::EquilibriumConfig;
use crate::plant::{CongestedShape, FreewayParams};

/// 3-cell reference plant: uniform geometry, 20% off-ramps, metered ramp at
/// cell 2, nominal inflows (10, 5, 0).
pub(crate) fn reference_params() -> FreewayParams {
    FreewayParams {
        a: vec![100.0; 3],
        q: vec![40.0; 3],
        c: vec![0.5; 3],
        delta: vec![50.0; 3],
        r: vec![0.5; 3],
        f_min: vec![10.0; 3],
        shape: vec![CongestedShape::LinearDropToMin; 3],
        p_exit: vec![0.2, 0.2],
        controlled: vec![1],
        v_star_uncontrolled: vec![10.0, 0.0],
        epsilon: 0.4,
    }
}

/// Equilibrium-side configuration matching `reference_params`.
pub(crate) fn reference_equilibrium() -> EquilibriumConfig {
    EquilibriumConfig {
        v_star_controlled: vec![5.0],
        mu: vec![40.0; 3],
        v_max: vec![20.0, 12.0, 13.0],
        target_density: None,
    }
}

/// Controller configuration matching `reference_params`: sigma 0.5 and the
/// metering gain at 90% of its admissible cap.
pub(crate) fn reference_controller() -> ControllerConfig {
    ControllerConfig {
        sigma: 0.5,
        tau: 0.9 * 0.4 * 0.4 * 0.125 / 11.0,
        b: vec![1.0],
    }
}
