//! Convergence analysis of simulated trajectories: residual series,
//! log-linear rate fitting, dead-beat lock detection, and recovery-gap
//! statistics.

use freeway_control::closed_loop::Trajectory;
use freeway_control::equilibrium::estimated_equilibrium;
use freeway_control::observer::ParameterEstimate;
use freeway_control::plant::Output;
use freeway_control::scenario::ScenarioRefs;

/// Residuals at or below this level count as numerically converged and are
/// excluded from rate fits.
pub const ZERO_LEVEL: f64 = 1e-14;

/// Fraction of the fit window's first residual below which a point is
/// treated as rounding noise rather than signal: after contracting by 13
/// orders of magnitude, a double carries no further rate information.
pub const REL_NOISE_FLOOR: f64 = 1e-13;

/// Euclidean distance between two equal-length vectors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between two measured triples, treating the
/// concatenation of occupancies and both flow blocks as one vector.
pub fn measurement_distance(w: &Output, y_star: &Output) -> f64 {
    (distance(w.x.as_slice(), y_star.x.as_slice()).powi(2)
        + distance(&w.q_out, &y_star.q_out).powi(2)
        + distance(&w.q_link, &y_star.q_link).powi(2))
    .sqrt()
}

/// Sum of the per-block Euclidean errors of a parameter estimate.
pub fn estimate_distance(theta: &ParameterEstimate, truth: &ParameterEstimate) -> f64 {
    distance(&theta.p_exit, &truth.p_exit)
        + distance(&theta.r, &truth.r)
        + distance(&theta.v_uncontrolled, &truth.v_uncontrolled)
}

/// State-only residuals `|x(t) - x*|` for `t = 0..=horizon`.
pub fn state_residuals(traj: &Trajectory, x_star: &[f64]) -> Vec<f64> {
    traj.records
        .iter()
        .map(|r| distance(&r.x, x_star))
        .chain(std::iter::once(distance(&traj.final_state, x_star)))
        .collect()
}

/// Composite residuals for `t = 0..=horizon`: distance to the equilibrium
/// occupancies, plus the stored measurement's distance to the equilibrium
/// measurement, plus the estimation errors of every parameter block and of
/// the selected metered set points.
pub fn composite_residuals(traj: &Trajectory, refs: &ScenarioRefs) -> Vec<f64> {
    let ctx = &refs.ctx;
    let truth = &refs.theta_true;
    let v_star_metered: Vec<f64> = ctx
        .controlled
        .iter()
        .map(|&cell| refs.v_star_full[cell])
        .collect();
    let horizon = traj.records.len();
    let mut out = Vec::with_capacity(horizon + 1);
    for (t, rec) in traj.records.iter().enumerate() {
        let w = if t == 0 {
            &traj.initial_window
        } else {
            &traj.records[t - 1].y
        };
        out.push(
            distance(&rec.x, &refs.x_star)
                + measurement_distance(w, &refs.y_star)
                + estimate_distance(&rec.theta_hat, truth)
                + distance(&rec.v_hat, &v_star_metered),
        );
    }
    let (_, v_hat_final) = estimated_equilibrium(&traj.final_estimate, ctx);
    out.push(
        distance(&traj.final_state, &refs.x_star)
            + measurement_distance(&traj.final_window, &refs.y_star)
            + estimate_distance(&traj.final_estimate, truth)
            + distance(&v_hat_final, &v_star_metered),
    );
    out
}

/// Per-step estimation errors `|theta_hat(t) - theta|` (max-abs over all
/// components) for `t = 0..=horizon`.
pub fn estimate_errors(traj: &Trajectory, truth: &ParameterEstimate) -> Vec<f64> {
    traj.records
        .iter()
        .map(|r| r.theta_hat.max_abs_distance(truth))
        .chain(std::iter::once(
            traj.final_estimate.max_abs_distance(truth),
        ))
        .collect()
}

/// Outcome of an exponential-rate fit on a residual tail.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFit {
    /// Least-squares line on `(t, ln residual)`: the residual behaves like
    /// `prefactor * exp(-rate * t)`.
    Fitted {
        prefactor: f64,
        rate: f64,
        r_squared: f64,
        points: usize,
    },
    /// The tail sits at numerical zero; the trajectory converged exactly.
    Converged { points: usize },
    /// Not enough above-zero tail points for a meaningful fit.
    InsufficientData { points: usize },
}

impl std::fmt::Display for RateFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateFit::Fitted {
                prefactor,
                rate,
                r_squared,
                points,
            } => write!(
                f,
                "residual ~ {prefactor:.3e} * exp(-{rate:.6} t) (r^2 = {r_squared:.4}, {points} points)"
            ),
            RateFit::Converged { points } => {
                write!(f, "converged to numerical zero ({points} above-zero points)")
            }
            RateFit::InsufficientData { points } => {
                write!(f, "insufficient data for a rate fit ({points} points)")
            }
        }
    }
}

/// Least-squares exponential fit on the residual tail starting at
/// `tail_start`. The fit window ends at the first point that reaches the
/// numerical noise floor — the larger of the absolute zero level and
/// `REL_NOISE_FLOOR` times the window's first residual: from there on the
/// series is floating-point noise around a converged trajectory, not
/// signal. If fewer than 10 usable points remain, the series is declared
/// converged (when it did reach the floor) or insufficient.
pub fn fit_exponential(residuals: &[f64], tail_start: usize) -> RateFit {
    let tail = &residuals[tail_start.min(residuals.len())..];
    let floor = tail
        .first()
        .map_or(ZERO_LEVEL, |r| (r * REL_NOISE_FLOOR).max(ZERO_LEVEL));
    let cut = tail
        .iter()
        .position(|r| *r <= floor)
        .unwrap_or(tail.len());
    let pts: Vec<(f64, f64)> = tail[..cut]
        .iter()
        .enumerate()
        .map(|(i, r)| ((tail_start + i) as f64, r.ln()))
        .collect();
    if pts.len() < 10 {
        return if cut < tail.len() {
            RateFit::Converged { points: pts.len() }
        } else {
            RateFit::InsufficientData { points: pts.len() }
        };
    }
    let len = pts.len() as f64;
    let mean_t = pts.iter().map(|(t, _)| t).sum::<f64>() / len;
    let mean_y = pts.iter().map(|(_, y)| y).sum::<f64>() / len;
    let ss_tt: f64 = pts.iter().map(|(t, _)| (t - mean_t) * (t - mean_t)).sum();
    let ss_ty: f64 = pts
        .iter()
        .map(|(t, y)| (t - mean_t) * (y - mean_y))
        .sum();
    let slope = ss_ty / ss_tt;
    let intercept = mean_y - slope * mean_t;
    let ss_res: f64 = pts
        .iter()
        .map(|(t, y)| {
            let e = y - (intercept + slope * t);
            e * e
        })
        .sum();
    let ss_tot: f64 = pts.iter().map(|(_, y)| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot <= f64::EPSILON * len {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    RateFit::Fitted {
        prefactor: intercept.exp(),
        rate: -slope,
        r_squared,
        points: pts.len(),
    }
}

/// Smallest `t` such that the error stays at or below `tol` from `t` to
/// the end of the series; `None` if even the final error exceeds `tol`.
pub fn lock_time(errors: &[f64], tol: f64) -> Option<usize> {
    let last_bad = errors.iter().rposition(|e| *e > tol);
    match last_bad {
        None => Some(0),
        Some(s) if s + 1 < errors.len() => Some(s + 1),
        Some(_) => None,
    }
}

/// First step whose estimate locked to the truth for good.
pub fn detect_deadbeat_lock(
    traj: &Trajectory,
    truth: &ParameterEstimate,
    tol: f64,
) -> Option<usize> {
    lock_time(&estimate_errors(traj, truth), tol)
}

/// Length of the longest run of `false` (leading, internal, or trailing)
/// in a flag sequence — 0 when every flag is set.
pub fn max_false_run(flags: &[bool]) -> usize {
    let mut worst = 0;
    let mut current = 0;
    for &f in flags {
        if f {
            current = 0;
        } else {
            current += 1;
            worst = worst.max(current);
        }
    }
    worst
}

/// Longest stretch of steps the identifier spent outside the recovery
/// set, anywhere in the run.
pub fn max_recovery_gap(traj: &Trajectory) -> usize {
    let flags: Vec<bool> = traj.records.iter().map(|r| r.in_a).collect();
    max_false_run(&flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_synthetic_exponential() {
        let res: Vec<f64> = (0..60).map(|t| 2.0 * (-0.3 * t as f64).exp()).collect();
        match fit_exponential(&res, 5) {
            RateFit::Fitted {
                prefactor,
                rate,
                r_squared,
                points,
            } => {
                assert!((rate - 0.3).abs() < 1e-6, "rate {rate}");
                assert!((prefactor - 2.0).abs() < 1e-6, "prefactor {prefactor}");
                assert!(r_squared > 0.999999);
                assert_eq!(points, 55);
            }
            other => panic!("unexpected fit outcome: {other}"),
        }
    }

    #[test]
    fn constant_residual_fits_rate_zero() {
        let res = vec![0.25; 40];
        match fit_exponential(&res, 0) {
            RateFit::Fitted {
                rate, r_squared, ..
            } => {
                assert_eq!(rate, 0.0);
                assert_eq!(r_squared, 1.0);
            }
            other => panic!("unexpected fit outcome: {other}"),
        }
    }

    #[test]
    fn the_fit_window_ends_where_the_residual_first_hits_zero() {
        // Clean decay for 50 steps, then floating-point noise that hovers
        // just above the zero level: the noise must not dilute the fit.
        let mut res: Vec<f64> = (0..50).map(|t| 2.0 * (-0.5 * t as f64).exp()).collect();
        res.push(1e-15);
        res.extend((0..200).map(|k| if k % 2 == 0 { 3e-14 } else { 2e-15 }));
        match fit_exponential(&res, 0) {
            RateFit::Fitted {
                rate,
                r_squared,
                points,
                ..
            } => {
                assert!((rate - 0.5).abs() < 1e-9, "rate {rate}");
                assert!(r_squared > 0.999999);
                assert_eq!(points, 50);
            }
            other => panic!("unexpected fit outcome: {other}"),
        }
    }

    #[test]
    fn numerically_zero_tails_report_convergence() {
        let mut res = vec![1.0, 0.5, 0.25];
        res.extend(vec![1e-16; 40]);
        assert_eq!(fit_exponential(&res, 0), RateFit::Converged { points: 3 });
        assert_eq!(
            fit_exponential(&[0.9, 0.8, 0.7], 0),
            RateFit::InsufficientData { points: 3 }
        );
    }

    #[test]
    fn lock_time_scans_for_the_last_violation() {
        assert_eq!(lock_time(&[0.0, 0.0, 0.0], 1e-9), Some(0));
        assert_eq!(lock_time(&[1.0, 2.0, 0.0, 0.0], 1e-9), Some(2));
        assert_eq!(lock_time(&[1.0, 0.0, 2.0, 0.0], 1e-9), Some(3));
        assert_eq!(lock_time(&[1.0, 0.0, 0.0, 2.0], 1e-9), None);
        // Tolerance is inclusive.
        assert_eq!(lock_time(&[1.0, 1e-9, 1e-9], 1e-9), Some(1));
    }

    #[test]
    fn false_runs_count_everywhere() {
        assert_eq!(max_false_run(&[true, true, true]), 0);
        assert_eq!(max_false_run(&[false, false, true, false]), 2);
        assert_eq!(max_false_run(&[true, false, false, false]), 3);
        assert_eq!(max_false_run(&[]), 0);
    }
}
