//! Pins the shipped scenario files to their hand-computed equilibrium
//! values, so edits to the JSON (or to the derivations) cannot drift
//! silently.

use freeway_harness::scenario_file::{load_scenario, BatteryFile};
use std::path::{Path, PathBuf};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn close(actual: &[f64], expected: &[f64]) -> bool {
    actual.len() == expected.len()
        && actual
            .iter()
            .zip(expected)
            .all(|(a, e)| (a - e).abs() <= 1e-12 * e.abs().max(1.0))
}

#[test]
fn the_reference_instance_matches_its_hand_computed_equilibrium() {
    let s = load_scenario(&scenario_path("ref3.json")).unwrap();
    let refs = s.validate().unwrap();

    // Per-cell equilibrium: inflows (10, 13, 10.4) at demand slope 1/2.
    assert!(close(&refs.x_star, &[20.0, 26.0, 20.8]), "{:?}", refs.x_star);
    assert!(close(&refs.v_star_full, &[10.0, 5.0, 0.0]));
    assert!(close(refs.y_star.x.as_slice(), &[20.0, 26.0, 20.8]));
    assert!(close(&refs.y_star.q_out, &[2.0, 2.6, 10.4]), "{:?}", refs.y_star.q_out);
    assert!(close(&refs.y_star.q_link, &[8.0, 10.4]), "{:?}", refs.y_star.q_link);

    assert!(close(&refs.theta_true.p_exit, &[0.2, 0.2]));
    assert!(close(&refs.theta_true.v_uncontrolled, &[10.0, 0.0]));
    assert!(close(&refs.theta_true.r, &[0.5, 0.5, 0.5]));

    let bound = 1.8181818181818182e-3;
    assert!((refs.tau_bound - bound).abs() <= 1e-12 * bound, "{}", refs.tau_bound);
    assert!((s.controller.tau - 0.9 * bound).abs() <= 1e-12 * bound);

    assert!(refs.warnings.is_empty(), "{:?}", refs.warnings);
}

#[test]
fn the_adversarial_variant_shares_the_reference_equilibrium() {
    let s = load_scenario(&scenario_path("ref3_adversarial.json")).unwrap();
    let refs = s.validate().unwrap();
    assert!(close(&refs.x_star, &[20.0, 26.0, 20.8]));
    assert!(close(&s.x0, &[100.0, 100.0, 100.0]));
}

#[test]
fn the_small_caps_instance_matches_its_hand_computed_equilibrium() {
    let s = load_scenario(&scenario_path("smallcaps.json")).unwrap();
    let refs = s.validate().unwrap();
    // Inflows (0.25, 0.7, 0.66) at demand slope 1/2.
    assert!(close(&refs.x_star, &[0.5, 1.4, 1.32]), "{:?}", refs.x_star);
    assert!(close(&refs.theta_true.v_uncontrolled, &[0.25, 0.1]));
}

#[test]
fn the_reference_battery_carries_the_documented_workload() {
    let battery = BatteryFile::load(&scenario_path("battery_ref.json")).unwrap();
    let random = battery.random.expect("random family");
    assert_eq!(random.count, 100);
    assert_eq!(random.sizes, [3, 4, 5, 6]);
    assert_eq!(random.horizon, 500);
    assert_eq!(battery.lock_tol, 1e-9);
    assert_eq!(battery.min_fit_fraction, 0.95);
}
