//! The closed loop: plant, controller, and identifier wired together, plus
//! the two certificates the convergence argument needs — an empirical
//! contraction margin for the weighted total occupancy, and the resulting
//! bound on how long the loop can stay away from the recovery set.

use crate::controller::{control_from_parts, overshoot};
use crate::equilibrium::estimated_equilibrium;
use crate::observer::{observer_update, ObserverState, ParameterEstimate};
use crate::plant::{step, Disturbance, FreewayParams, Output, State};
use crate::scenario::{ControlContext, DisturbancePolicy, Scenario, ScenarioRefs};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Everything observable about one closed-loop step `t -> t+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Occupancies at the start of the step.
    pub x: Vec<f64>,
    /// Metered commands applied over the step, aligned with the metered
    /// cells.
    pub u: Vec<f64>,
    /// Merge priority weights drawn for the step.
    pub d: Vec<f64>,
    /// Measurement produced by the step.
    pub y: Output,
    /// Estimate the controller used (before this step's identifier
    /// update).
    pub theta_hat: ParameterEstimate,
    /// Estimated equilibrium occupancies the controller steered toward.
    pub x_hat: Vec<f64>,
    /// Metered set points before saturation.
    pub v_hat: Vec<f64>,
    /// Weighted overshoot that drove the saturation.
    pub overshoot: f64,
    /// Whether the identifier's stored window was in the recovery set
    /// (and the estimate was therefore recovered this step).
    pub in_a: bool,
}

/// A simulated closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One record per step.
    pub records: Vec<StepRecord>,
    /// Stored measurement the identifier started from.
    pub initial_window: Output,
    /// Occupancies after the last step.
    pub final_state: Vec<f64>,
    /// Estimate after the last identifier update.
    pub final_estimate: ParameterEstimate,
    /// Stored measurement after the last step.
    pub final_window: Output,
    /// First step whose identifier update fired, if any.
    pub first_recovery: Option<usize>,
}

/// A validated scenario's references together with its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub refs: ScenarioRefs,
    pub trajectory: Trajectory,
}

/// Seeded source of per-step merge priority weights.
pub struct DisturbanceGen {
    policy: DisturbancePolicy,
    seed: u64,
    rng: ChaCha8Rng,
    counter: u64,
    links: usize,
}

impl DisturbanceGen {
    pub fn new(policy: DisturbancePolicy, seed: u64, links: usize) -> Self {
        DisturbanceGen {
            policy,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
            links,
        }
    }

    /// Draws the weights for the next step.
    pub fn draw(&mut self) -> Disturbance {
        let counter = self.counter;
        self.counter += 1;
        match &self.policy {
            DisturbancePolicy::Constant(d) => Disturbance(d.clone()),
            DisturbancePolicy::IidUniform => {
                Disturbance((0..self.links).map(|_| self.rng.gen_range(0.0..=1.0)).collect())
            }
            DisturbancePolicy::PerStepSeeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                Disturbance((0..self.links).map(|_| rng.gen_range(0.0..=1.0)).collect())
            }
            DisturbancePolicy::AdversarialExtremes => Disturbance(
                (0..self.links)
                    .map(|_| if self.rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                    .collect(),
            ),
        }
    }
}

/// Full inflow vector for one step: true uncontrolled inflows plus the
/// metered commands.
fn applied_inflows(params: &FreewayParams, v_star_full: &[f64], u: &[f64]) -> Vec<f64> {
    let mut v = v_star_full.to_vec();
    for (pos, &cell) in params.controlled.iter().enumerate() {
        v[cell] = u[pos];
    }
    v
}

/// Controller evaluation at one state: estimated equilibrium, overshoot,
/// and the saturated commands.
fn evaluate_controller(
    theta: &ParameterEstimate,
    x: &State,
    ctx: &ControlContext,
) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>) {
    let (x_hat, v_hat) = estimated_equilibrium(theta, ctx);
    let xi = overshoot(x, &x_hat, ctx.sigma);
    let u = control_from_parts(&v_hat, xi, ctx);
    (x_hat, v_hat, xi, u)
}

/// Validates and runs a scenario.
///
/// When no stored measurement is configured, the loop warms up by taking
/// one plant step from the initial occupancies (consuming one disturbance
/// draw) and keeping only its measurement, so the identifier starts from
/// something the plant could actually have produced; the trajectory still
/// starts at the configured occupancies.
pub fn simulate(scenario: &Scenario) -> Result<SimulationRun> {
    let refs = scenario.validate()?;
    let ctx = &refs.ctx;
    let params = &scenario.params;
    let mut gen = DisturbanceGen::new(scenario.policy.clone(), scenario.seed, params.n() - 1);
    let theta0 = scenario
        .theta_hat0
        .clone()
        .unwrap_or_else(|| ParameterEstimate::box_center(params, &ctx.v_max));
    let mut x = State(scenario.x0.clone());
    let w0 = match &scenario.w0 {
        Some(w) => w.clone(),
        None => {
            let (.., u) = evaluate_controller(&theta0, &x, ctx);
            let v = applied_inflows(params, &refs.v_star_full, &u);
            let (_, w) = step(params, &x, &v, &gen.draw())?;
            w
        }
    };
    let initial_window = w0.clone();
    let mut obs = ObserverState::new(w0, theta0);
    let mut records = Vec::with_capacity(scenario.horizon);
    let mut first_recovery = None;
    for t in 0..scenario.horizon {
        let theta_used = obs.theta_hat.clone();
        let (x_hat, v_hat, xi, u) = evaluate_controller(&theta_used, &x, ctx);
        let v = applied_inflows(params, &refs.v_star_full, &u);
        let d = gen.draw();
        let (next, y) = step(params, &x, &v, &d)?;
        let fired = observer_update(&mut obs, &y, ctx);
        if fired && first_recovery.is_none() {
            first_recovery = Some(t);
        }
        records.push(StepRecord {
            x: x.0.clone(),
            u,
            d: d.0.clone(),
            y,
            theta_hat: theta_used,
            x_hat,
            v_hat,
            overshoot: xi,
            in_a: fired,
        });
        x = next;
    }
    Ok(SimulationRun {
        refs,
        trajectory: Trajectory {
            records,
            initial_window,
            final_state: x.0,
            final_estimate: obs.theta_hat,
            final_window: obs.window,
            first_recovery,
        },
    })
}

/// One sample point for the contraction certificate.
#[derive(Debug, Clone)]
pub struct ContractionSample {
    pub x: State,
    pub v: Vec<f64>,
    pub d: Disturbance,
}

/// Weighted total occupancy `sum_i (n - i) x_i` (0-based), the Lyapunov-like
/// quantity the drain argument contracts: upstream cells count more because
/// their vehicles still have the whole chain to traverse.
pub fn weighted_total(x: &[f64]) -> f64 {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, xi)| (n - i) as f64 * xi)
        .sum()
}

/// Deterministic sample set for the contraction certificate: the corners
/// of the state/inflow boxes plus seeded random interior points.
pub fn contraction_samples(
    params: &FreewayParams,
    v_max: &[f64],
    random_points: usize,
    seed: u64,
) -> Vec<ContractionSample> {
    let n = params.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let tiny = 1e-9;
    let corners_x: [Vec<f64>; 2] = [params.a.clone(), vec![tiny; n]];
    let corners_v: [Vec<f64>; 2] = [v_max.to_vec(), {
        let mut v = vec![0.0; n];
        v[0] = tiny;
        v
    }];
    for x in &corners_x {
        for v in &corners_v {
            for dd in [0.0, 1.0] {
                samples.push(ContractionSample {
                    x: State(x.clone()),
                    v: v.clone(),
                    d: Disturbance(vec![dd; n - 1]),
                });
            }
        }
    }
    for _ in 0..random_points {
        let x = State(
            params
                .a
                .iter()
                .map(|&a| a * (1.0 - rng.gen::<f64>()))
                .collect(),
        );
        let v = v_max
            .iter()
            .enumerate()
            .map(|(i, &cap)| {
                if i == 0 {
                    cap * (1.0 - rng.gen::<f64>())
                } else {
                    rng.gen_range(0.0..=cap)
                }
            })
            .collect();
        let d = Disturbance((0..n - 1).map(|_| rng.gen_range(0.0..=1.0)).collect());
        samples.push(ContractionSample { x, v, d });
    }
    samples
}

/// Largest contraction rate `C` with
/// `weighted_total(x+) <= (1 - C) weighted_total(x) + sum_i (n - i) v_i`
/// on every sample, computed in closed form per sample and capped just
/// below 1.
pub fn contraction_margin(params: &FreewayParams, samples: &[ContractionSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("no contraction samples supplied".into()));
    }
    let mut c: f64 = 1.0 - 1e-9;
    for s in samples {
        let (next, _) = step(params, &s.x, &s.v, &s.d)?;
        let w = weighted_total(s.x.as_slice());
        let w_next = weighted_total(next.as_slice());
        let v_total = weighted_total(&s.v);
        c = c.min((w - w_next + v_total) / w);
    }
    Ok(c)
}

/// One-call contraction certificate: draws the corner-plus-random sample
/// set, finds the largest supported rate, and re-counts violations of
/// `weighted_total(x+) <= (1 - C) weighted_total(x) + weighted_total(v)`
/// at that rate (zero up to rounding; returned so callers can assert it).
/// The re-check allows a relative slack of `1e-9` because the bound is an
/// algebraic rearrangement of the margin expression and the two round
/// differently on the binding sample.
pub fn contraction_check(
    params: &FreewayParams,
    v_max: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let samples = contraction_samples(params, v_max, sample_count, seed);
    let c = contraction_margin(params, &samples)?;
    let mut violations = 0;
    for s in &samples {
        let (next, _) = step(params, &s.x, &s.v, &s.d)?;
        let bound = (1.0 - c) * weighted_total(s.x.as_slice()) + weighted_total(&s.v);
        if weighted_total(next.as_slice()) > bound + 1e-9 * bound.abs().max(1.0) {
            violations += 1;
        }
    }
    Ok((c, violations))
}

/// How many consecutive steps the closed loop can spend entirely outside
/// the low-occupancy box before the weighted-total contraction forces it
/// back in: outside the box every meter sits on its floor, so the weighted
/// total decays geometrically at rate `1 - C` toward `kappa / C`, where
/// `kappa` aggregates the floors and the uncontrolled caps. Requires
/// `kappa < C * min_i (n - i) mu_i`; otherwise the floors alone can keep
/// some cell pinned above its box edge and no such bound exists.
pub fn recovery_gap_bound(ctx: &ControlContext, a: &[f64], c: f64) -> Result<usize> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!(
            "contraction rate must lie in (0, 1), got {c}"
        )));
    }
    let n = ctx.n;
    let weight = |i: usize| (n - i) as f64;
    let mut kappa = 0.0;
    for (pos, &cell) in ctx.controlled.iter().enumerate() {
        kappa += weight(cell) * ctx.b[pos];
    }
    for &cell in &ctx.uncontrolled {
        kappa += weight(cell) * ctx.v_max[cell];
    }
    let min_weighted_mu = (0..n)
        .map(|i| weight(i) * ctx.mu[i])
        .fold(f64::INFINITY, f64::min);
    let threshold = c * min_weighted_mu;
    if !(kappa < threshold) {
        return Err(Error::RecurrenceBoundUnavailable {
            kappa,
            threshold,
            rate: c,
        });
    }
    let ceiling: f64 = (0..n).map(|i| weight(i) * a[i]).sum();
    let steps = ((min_weighted_mu - kappa / c).ln() - ceiling.ln()) / (1.0 - c).ln();
    Ok((2 + steps.ceil() as i64).max(1) as usize)
}
