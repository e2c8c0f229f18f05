//! Acceptance suite: one test per headline claim, each printing a
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`;
//! failures repeat the line in the panic message).

use freeway_control::closed_loop::{contraction_check, recovery_gap_bound, simulate};
use freeway_control::controller::control;
use freeway_control::observer::{
    deadbeat_update, in_recovery_set, observer_update, recover_parameters, ObserverState,
    ParameterEstimate,
};
use freeway_control::plant::{step, Disturbance, Output, State};
use freeway_control::scenario::Scenario;
use freeway_harness::battery::{random_scenario, run_battery, BatteryOutcome};
use freeway_harness::run::RunOptions;
use freeway_harness::scenario_file::{load_scenario, BatteryFile, RandomBattery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn ref3() -> Scenario {
    load_scenario(&scenario_path("ref3.json")).expect("reference scenario must load")
}

fn smallcaps() -> Scenario {
    load_scenario(&scenario_path("smallcaps.json")).expect("small-caps scenario must load")
}

struct BatteryRun {
    outcome: BatteryOutcome,
    wall: Duration,
}

static BATTERY: OnceLock<BatteryRun> = OnceLock::new();

fn battery() -> &'static BatteryRun {
    BATTERY.get_or_init(|| {
        let path = scenario_path("battery_ref.json");
        let battery = BatteryFile::load(&path).expect("battery file must load");
        let random = battery.random.as_ref().expect("reference battery is random");
        assert_eq!(random.count, 100);
        assert_eq!(random.sizes, [3, 4, 5, 6]);
        assert_eq!(random.horizon, 500);
        assert_eq!(battery.lock_tol, 1e-9);
        let opts = RunOptions {
            out_dir: None,
            ..RunOptions::default()
        };
        let started = Instant::now();
        let outcome = run_battery(&battery, path.parent().unwrap(), &opts)
            .expect("battery execution must not abort");
        BatteryRun {
            outcome,
            wall: started.elapsed(),
        }
    })
}

/// Prints the criterion's verdict line and returns the message for the
/// assertion, so failures carry the same words.
fn verdict(index: usize, name: &str, pass: bool, detail: &str) -> String {
    let line = format!(
        "criterion {index} ({name}): {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    line
}

#[test]
fn criterion_1_exact_deadbeat_identification() {
    let run = battery();
    let o = &run.outcome;
    let total = o.entries.len();
    let locked = o
        .entries
        .iter()
        .filter(|e| e.checks.locked && e.checks.estimate_tight)
        .count();
    let worst_lock = o
        .entries
        .iter()
        .filter_map(|e| e.summary.lock_time)
        .max()
        .unwrap_or(0);
    let pass = o.failures.is_empty()
        && total == 100
        && locked == total
        && run.wall < Duration::from_secs(30);
    let detail = format!(
        "{locked}/{total} runs locked within tol 1e-9 and held it to the horizon \
         (latest lock at step {worst_lock}; {} failures; wall {:.2} s < 30 s)",
        o.failures.len(),
        run.wall.as_secs_f64()
    );
    let line = verdict(1, "exact dead-beat identification", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_2_exponential_convergence() {
    let o = &battery().outcome;
    let stragglers: Vec<&str> = o
        .entries
        .iter()
        .filter(|e| !e.checks.fit_strict)
        .map(|e| e.summary.id.as_str())
        .collect();
    let stragglers_ok = o
        .entries
        .iter()
        .filter(|e| !e.checks.fit_strict)
        .all(|e| e.checks.fit_fallback);
    let pass = o.fit_strict_fraction >= 0.95 && stragglers_ok;
    let detail = format!(
        "clean post-lock fits (rate > 0, r^2 >= 0.9, or numerical zero) in {:.1}% of runs \
         (>= 95% required); {} stragglers all ended below 1e-6 of their initial residual: {:?}",
        100.0 * o.fit_strict_fraction,
        stragglers.len(),
        stragglers
    );
    let line = verdict(2, "exponential convergence", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_3_one_step_recovery_oracle() {
    let s = ref3();
    let refs = s.validate().unwrap();
    let ctx = &refs.ctx;
    let n = s.params.n();
    let truth = ParameterEstimate::from_truth(&s.params);
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let mut worst = 0.0f64;
    let mut done = 0usize;
    while done < 10_000 {
        let x_prev = State(
            (0..n)
                .map(|i| rng.gen_range(0.0..ctx.mu[i]).max(1e-12))
                .collect(),
        );
        let draw_v = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let v: f64 = rng.gen_range(0.0..=ctx.v_max[i]);
                    if i == 0 {
                        v.max(1e-12)
                    } else {
                        v
                    }
                })
                .collect()
        };
        let draw_d = |rng: &mut ChaCha8Rng| {
            Disturbance((0..n - 1).map(|_| rng.gen_range(0.0..=1.0)).collect())
        };
        let v = draw_v(&mut rng);
        let (x_next, y_prev) = step(&s.params, &x_prev, &v, &draw_d(&mut rng)).unwrap();
        if !in_recovery_set(&y_prev, &ctx.mu) {
            continue; // boundary draw; the gate would hold the estimate
        }
        let (_, y_curr) =
            step(&s.params, &x_next, &draw_v(&mut rng), &draw_d(&mut rng)).unwrap();
        let recovered = recover_parameters(&y_curr, &y_prev, ctx).unwrap();
        // The inflow block recovers the inflows that actually drove the
        // transition; in closed loop those are the nominal ones.
        let expected = ParameterEstimate {
            p_exit: truth.p_exit.clone(),
            v_uncontrolled: ctx.uncontrolled.iter().map(|&i| v[i]).collect(),
            r: truth.r.clone(),
        };
        worst = worst.max(recovered.max_abs_distance(&expected));
        done += 1;
    }
    let pass = worst <= 1e-12;
    let detail = format!(
        "10000 random low-occupancy transitions inverted; worst componentwise error {worst:.3e} (tol 1e-12)"
    );
    let line = verdict(3, "one-step recovery oracle", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_4_state_space_invariance() {
    let family = RandomBattery {
        count: 2,
        sizes: vec![5, 6],
        horizon: 10,
        base_seed: 77,
    };
    let instances = vec![
        ref3(),
        smallcaps(),
        random_scenario(&family, 0).unwrap(),
        random_scenario(&family, 1).unwrap(),
    ];
    let mut violations = 0usize;
    let mut steps = 0usize;
    for (k, s) in instances.iter().enumerate() {
        let refs = s.validate().unwrap();
        let n = s.params.n();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + k as u64);
        for _ in 0..10_000 {
            let x = State(
                (0..n)
                    .map(|i| s.params.a[i] * (1.0 - rng.gen::<f64>()))
                    .collect(),
            );
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let v: f64 = rng.gen_range(0.0..=refs.ctx.v_max[i]);
                    if i == 0 {
                        v.max(1e-12)
                    } else {
                        v
                    }
                })
                .collect();
            let d = Disturbance((0..n - 1).map(|_| rng.gen_range(0.0..=1.0)).collect());
            match step(&s.params, &x, &v, &d) {
                Ok((next, _)) => {
                    if next.check_admissible(&s.params).is_err() {
                        violations += 1;
                    }
                }
                Err(_) => violations += 1,
            }
            steps += 1;
        }
    }
    let pass = violations == 0;
    let detail = format!(
        "{steps} random steps across {} instances stayed inside (0, a]; {violations} violations",
        instances.len()
    );
    let line = verdict(4, "state-space invariance", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_5_priority_invariance_in_the_low_occupancy_box() {
    let mut worst_closed_form = 0.0f64;
    let mut exact_mismatches = 0usize;
    for (k, s) in [ref3(), smallcaps()].into_iter().enumerate() {
        let refs = s.validate().unwrap();
        let ctx = &refs.ctx;
        let n = s.params.n();
        let mut rng = ChaCha8Rng::seed_from_u64(500 + k as u64);
        for _ in 0..1_000 {
            let x = State(
                (0..n)
                    .map(|i| rng.gen_range(0.0..ctx.mu[i]).max(1e-12))
                    .collect(),
            );
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let v: f64 = rng.gen_range(0.0..=ctx.v_max[i]);
                    if i == 0 {
                        v.max(1e-12)
                    } else {
                        v
                    }
                })
                .collect();
            let zeros = Disturbance(vec![0.0; n - 1]);
            let ones = Disturbance(vec![1.0; n - 1]);
            let (next0, y0) = step(&s.params, &x, &v, &zeros).unwrap();
            let (next1, y1) = step(&s.params, &x, &v, &ones).unwrap();
            if next0.as_slice() != next1.as_slice()
                || y0.q_out != y1.q_out
                || y0.q_link != y1.q_link
            {
                exact_mismatches += 1;
            }
            for i in 0..n {
                let upstream = if i == 0 {
                    0.0
                } else {
                    (1.0 - s.params.p_exit[i - 1]) * s.params.r[i - 1] * x[i - 1]
                };
                let closed = x[i] - s.params.r[i] * x[i] + v[i] + upstream;
                worst_closed_form = worst_closed_form.max((next0[i] - closed).abs());
            }
        }
    }
    let pass = exact_mismatches == 0 && worst_closed_form <= 1e-12;
    let detail = format!(
        "2000 low-occupancy steps: extreme priority vectors gave bitwise-identical \
         outputs ({exact_mismatches} mismatches) and matched the linear update within \
         {worst_closed_form:.3e} (tol 1e-12)"
    );
    let line = verdict(5, "priority invariance in the low-occupancy box", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_6_saturation_outside_the_box() {
    let family = RandomBattery {
        count: 1,
        sizes: vec![5],
        horizon: 10,
        base_seed: 77,
    };
    let mut violations = 0usize;
    let mut trials = 0usize;
    for (k, s) in [ref3(), random_scenario(&family, 0).unwrap()]
        .into_iter()
        .enumerate()
    {
        let refs = s.validate().unwrap();
        let ctx = &refs.ctx;
        let n = s.params.n();
        let mut rng = ChaCha8Rng::seed_from_u64(600 + k as u64);
        for _ in 0..1_000 {
            let theta = ParameterEstimate {
                p_exit: (0..n - 1)
                    .map(|_| rng.gen_range(0.0..=1.0 - s.params.epsilon))
                    .collect(),
                v_uncontrolled: ctx
                    .uncontrolled
                    .iter()
                    .map(|&i| rng.gen_range(0.0..=ctx.v_max[i]))
                    .collect(),
                r: (0..n)
                    .map(|_| rng.gen_range(s.params.epsilon..=1.0 - s.params.epsilon))
                    .collect(),
            };
            let mut x: Vec<f64> = (0..n)
                .map(|i| s.params.a[i] * (1.0 - rng.gen::<f64>()))
                .collect();
            // Push one coordinate out of the low-occupancy box.
            let j = rng.gen_range(0..n);
            x[j] = rng.gen_range(ctx.mu[j]..=s.params.a[j]);
            let u = control(&theta, &State(x), ctx);
            trials += 1;
            if u != ctx.b {
                violations += 1;
            }
        }
    }
    let pass = violations == 0;
    let detail = format!(
        "{trials} random (estimate, congested state) pairs: every metered inflow \
         equaled its floor exactly; {violations} violations"
    );
    let line = verdict(6, "saturation outside the box", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_7_contraction_and_recurrence_bound() {
    let s = ref3();
    let refs = s.validate().unwrap();

    // Clause 1: sampled contraction certificate on the reference instance.
    let (c, violations) =
        contraction_check(&s.params, &refs.ctx.v_max, 10_000, 700).unwrap();
    let clause1 = c > 0.0 && c < 1.0 && violations == 0;

    // Clause 2: a finite recurrence bound from that rate.
    let bound = recovery_gap_bound(&refs.ctx, &s.params.a, c);
    let clause2 = bound.is_ok();

    // Clause 3: observed recovery gaps in the battery against m + 1.
    let max_gap = battery()
        .outcome
        .entries
        .iter()
        .map(|e| e.summary.max_recovery_gap)
        .max()
        .unwrap_or(0);
    let clause3 = match &bound {
        Ok(m) => max_gap <= m + 1,
        Err(_) => false, // no m exists to compare against
    };

    // Supplementary demonstration on an instance whose inflow caps do
    // satisfy the drain condition, to show the bound machinery itself.
    let small = smallcaps();
    let small_refs = small.validate().unwrap();
    let (small_c, small_viol) =
        contraction_check(&small.params, &small_refs.ctx.v_max, 10_000, 701).unwrap();
    let small_m = recovery_gap_bound(&small_refs.ctx, &small.params.a, small_c).unwrap();
    let small_run = simulate(&small).unwrap();
    let small_gap = freeway_harness::analysis::max_recovery_gap(&small_run.trajectory);
    println!(
        "  [supplementary] small-caps instance: C = {small_c:.4} ({small_viol} violations), \
         m = {small_m}, observed max recovery gap {small_gap} <= m + 1 = {}",
        small_m + 1
    );
    assert!(small_c > 0.0 && small_c < 1.0 && small_viol == 0);
    assert!(small_gap <= small_m + 1);

    let pass = clause1 && clause2 && clause3;
    let bound_text = match &bound {
        Ok(m) => format!("m = {m}"),
        Err(e) => format!("no finite m ({e})"),
    };
    let detail = format!(
        "contraction on the reference instance: C = {c:.4} with {violations} violations \
         over 10008 samples [{}]; recurrence bound: {bound_text} [{}]; battery max \
         recovery gap {max_gap} vs m + 1 [{}]. The reference instance cannot satisfy \
         the drain condition: the bound needs kappa < C * min weighted box edge = \
         {:.1} * C, but kappa = 2*1 (meter floor) + 3*20 + 1*13 (unmetered caps) = 75, \
         so C > 1.875 would be required and C is below 1 by definition; even counting \
         the true unmetered inflows (10, 0) instead of their caps gives kappa = 32, \
         needing C > 0.8 against an observed C of about 0.017. The small-caps \
         demonstration above shows the bound holds where the condition is satisfiable.",
        if clause1 { "ok" } else { "FAIL" },
        if clause2 { "ok" } else { "FAIL" },
        if clause3 { "ok" } else { "FAIL" },
        refs.ctx.mu.iter().enumerate().map(|(i, m)| (refs.ctx.n - i) as f64 * m)
            .fold(f64::INFINITY, f64::min),
    );
    let line = verdict(7, "contraction inequality and recurrence bound", pass, &detail);
    assert!(pass, "{line}");
}

#[test]
fn criterion_8_generic_and_specialized_observers_agree() {
    let mut s = ref3();
    s.horizon = 1_100;
    let run = simulate(&s).unwrap();
    let traj = &run.trajectory;
    let ctx = &run.refs.ctx;
    assert!(traj.records.len() >= 1_000);

    let bits = |a: &ParameterEstimate, b: &ParameterEstimate| {
        let eq = |u: &[f64], w: &[f64]| {
            u.len() == w.len() && u.iter().zip(w).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        eq(&a.p_exit, &b.p_exit) && eq(&a.v_uncontrolled, &b.v_uncontrolled) && eq(&a.r, &b.r)
    };

    let mut specialized = ObserverState::new(
        traj.initial_window.clone(),
        traj.records[0].theta_hat.clone(),
    );
    let mut generic_window: Vec<Output> = vec![traj.initial_window.clone()];
    let mut generic_theta = traj.records[0].theta_hat.clone();

    let mut divergences = 0usize;
    for (t, rec) in traj.records.iter().enumerate() {
        let fired_spec = observer_update(&mut specialized, &rec.y, ctx);
        let fired_gen = deadbeat_update(
            &mut generic_window,
            &mut generic_theta,
            &rec.y,
            |w: &[Output]| in_recovery_set(&w[0], &ctx.mu),
            |y, w| recover_parameters(y, &w[0], ctx).expect("gate already checked"),
        );
        let logged_next = if t + 1 < traj.records.len() {
            &traj.records[t + 1].theta_hat
        } else {
            &traj.final_estimate
        };
        if fired_spec != fired_gen
            || fired_spec != rec.in_a
            || !bits(&specialized.theta_hat, &generic_theta)
            || !bits(&specialized.theta_hat, logged_next)
        {
            divergences += 1;
        }
    }
    let pass = divergences == 0;
    let detail = format!(
        "window-of-one generic update replayed {} logged steps bit-identically to the \
         specialized observer and the trajectory log; {divergences} divergences",
        traj.records.len()
    );
    let line = verdict(8, "generic/specialized observer equivalence", pass, &detail);
    assert!(pass, "{line}");
}
