//! End-to-end acceptance gate. Each test covers one release criterion,
//! asserts it at its stated tolerance and runtime budget, and prints a
//! single summary line (visible with `--nocapture` or on failure).
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use cfstep::scenarios::{
    bench_steppers, build_scene, run_mpc_trial, run_simulation, sample_task,
    sliding_cube_metrics, MpcRunConfig, SceneOptions, StepperChoice, TaskKind,
};
use cfstep::validate;

/// Closed-loop rotation trials used by the success-rate and latency checks.
fn rotation_trials(
    k_model: f64,
    max_steps: Option<usize>,
    seeds: std::ops::Range<u64>,
) -> Vec<cfstep::scenarios::TrialRecord> {
    let scene = build_scene("fingertips_box", &SceneOptions::default()).unwrap();
    let cfg = MpcRunConfig { k_model, ..MpcRunConfig::default() };
    seeds
        .map(|seed| {
            let (initial, mut task) = sample_task(&scene, TaskKind::Rotation, seed).unwrap();
            if let Some(cap) = max_steps {
                task.max_steps = cap;
            }
            run_mpc_trial(&scene, &initial, &task, &cfg).unwrap()
        })
        .collect()
}

#[test]
fn a01_single_row_closed_form_matches_dense_dual() {
    let t0 = Instant::now();
    let report = validate::closed_form_dual_exactness(1000, 101).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    println!(
        "closed-form vs dense dual: {} cases, worst gap {:.3e} (tol {:.0e}), {:.1}s: {}",
        report.cases,
        report.worst,
        report.tol,
        secs,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
    assert!(secs < 10.0, "budget 10s exceeded: {secs:.1}s");
}

#[test]
fn a02_force_gap_products_vanish_at_rest_points() {
    let report = validate::modified_complementarity(10_000, 102).unwrap();
    println!(
        "shifted complementarity residual: {} cases, worst {:.3e} (tol {:.0e}): {}",
        report.cases,
        report.worst,
        report.tol,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
}

#[test]
fn a03_friction_impulses_stay_inside_the_cone() {
    let report = validate::coulomb_cone(10_000, 103).unwrap();
    println!(
        "friction cone containment: {} cases over all steppers, worst excess {:.3e} \
         (tol {:.0e}): {}",
        report.cases,
        report.worst,
        report.tol,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
}

#[test]
fn a04_qp_stepper_agrees_with_enumerated_lcp() {
    let report = validate::qp_lcp_cross_check(100, 104).unwrap();
    println!(
        "QP vs enumerated LCP: {} cases, worst velocity gap {:.3e} (tol {:.0e}), {}: {}",
        report.cases,
        report.worst,
        report.tol,
        report.detail,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
}

#[test]
fn a05_planner_gradient_matches_finite_differences() {
    let report = validate::gradient_check(100, 105).unwrap();
    println!(
        "adjoint vs central differences: {} problems, worst relative gap {:.3e} \
         (tol {:.0e}): {}",
        report.cases,
        report.worst,
        report.tol,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
}

#[test]
fn a06_kicked_cube_stops_on_time_without_climbing() {
    let t0 = Instant::now();
    let scene = build_scene("sliding_cube", &SceneOptions::default()).unwrap();
    let cf = sliding_cube_metrics(&scene, StepperChoice::CfExtended, 1500, 750).unwrap();
    let qp = sliding_cube_metrics(&scene, StepperChoice::Qp, 1500, 750).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let stop = cf.stop_time.unwrap_or(f64::INFINITY);
    let ok = (0.35..=0.50).contains(&stop)
        && cf.net_drift.abs() <= 1e-3
        && qp.peak_rise > cf.peak_rise;
    println!(
        "kicked cube: stop {:.3}s (want 0.35..0.50), |drift| {:.2e} m (tol 1e-3), \
         peak rise {:.2e} m vs QP {:.2e} m, {:.1}s: {}",
        stop,
        cf.net_drift.abs(),
        cf.peak_rise,
        qp.peak_rise,
        secs,
        if ok { "pass" } else { "FAIL" }
    );
    assert!((0.35..=0.50).contains(&stop), "stop time {stop:.3}s outside 0.35..0.50");
    assert!(cf.net_drift.abs() <= 1e-3, "net height drift {:.3e} m", cf.net_drift);
    assert!(
        qp.peak_rise > cf.peak_rise,
        "QP peak rise {:.3e} not above damped closed form {:.3e}",
        qp.peak_rise,
        cf.peak_rise
    );
    assert!(secs < 30.0, "budget 30s exceeded: {secs:.1}s");
}

#[test]
fn a07_squeezed_sphere_keeps_more_speed_than_qp() {
    let scene = build_scene("sphere_two_planes", &SceneOptions::default()).unwrap();
    let steps = (2.0 / scene.h).round() as usize;
    let cf = run_simulation(&scene, StepperChoice::CfExtended, steps).unwrap();
    let qp = run_simulation(&scene, StepperChoice::Qp, steps).unwrap();
    let cf_plateau = cf.terminal_velocity(0, 0, 0.25);
    let qp_plateau = qp.terminal_velocity(0, 0, 0.25);
    let ok = cf_plateau > qp_plateau;
    println!(
        "squeezed sphere over 2s: damped closed form plateau {:.3} m/s vs QP {:.3} m/s: {}",
        cf_plateau,
        qp_plateau,
        if ok { "pass" } else { "FAIL" }
    );
    assert!(
        ok,
        "compliant plateau {cf_plateau:.4} m/s not above rigid baseline {qp_plateau:.4} m/s"
    );
}

#[test]
fn a08_closed_form_is_faster_on_the_box_train() {
    let t0 = Instant::now();
    let scene =
        build_scene("push_boxes", &SceneOptions { n_cubes: 10, ..SceneOptions::default() })
            .unwrap();
    let report = bench_steppers(&scene, 50, 3).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let ok = report.speedup >= 3.0;
    println!(
        "box train solve times: closed form {:.3} ms vs QP {:.3} ms over {:.0} mean rows, \
         speedup {:.0}x (need 3x), {:.1}s: {}",
        report.cf_mean_ms,
        report.qp_mean_ms,
        report.mean_rows,
        report.speedup,
        secs,
        if ok { "pass" } else { "FAIL" }
    );
    assert!(ok, "speedup {:.2}x below 3x", report.speedup);
    assert!(secs < 60.0, "budget 60s exceeded: {secs:.1}s");
}

#[test]
fn a09_rotation_tasks_succeed_within_budget() {
    let t0 = Instant::now();
    let trials = rotation_trials(1.0, None, 0..10);
    let secs = t0.elapsed().as_secs_f64();
    let wins = trials.iter().filter(|t| t.success).count();
    let ok = wins >= 8;
    println!(
        "rotation tasks: {wins}/10 reached the goal within 2000 steps, {:.0}s: {}",
        secs,
        if ok { "pass" } else { "FAIL" }
    );
    for (seed, t) in trials.iter().enumerate() {
        println!(
            "  seed {seed}: {} after {} steps, pos err {:.4} m, quat err {:.4}",
            if t.success { "ok " } else { "out" },
            t.steps,
            t.final_pos_err,
            t.final_quat_err
        );
    }
    assert!(ok, "only {wins}/10 trials succeeded");
    assert!(secs < 600.0, "budget 10min exceeded: {secs:.0}s");
}

#[test]
fn a10_policy_step_stays_under_latency_budget() {
    let trials = rotation_trials(1.0, None, 0..10);
    let mean_ms =
        trials.iter().map(|t| t.mean_solve_ms).sum::<f64>() / trials.len() as f64;
    let ok = mean_ms <= 100.0;
    println!(
        "policy step latency: mean {:.2} ms per closed-loop step (budget 100 ms): {}",
        mean_ms,
        if ok { "pass" } else { "FAIL" }
    );
    assert!(ok, "mean policy step {mean_ms:.2} ms above 100 ms");
}

#[test]
fn a11_success_holds_across_model_stiffness_mismatch() {
    let mut lines = Vec::new();
    let mut ok = true;
    for k_model in [0.01, 0.1, 1.0, 10.0] {
        let trials = rotation_trials(k_model, Some(500), 0..10);
        let wins = trials.iter().filter(|t| t.success).count();
        ok &= wins >= 6;
        lines.push(format!("gain {k_model}: {wins}/10"));
    }
    println!(
        "stiffness mismatch: {} within 500 steps (need 6/10 each): {}",
        lines.join(", "),
        if ok { "pass" } else { "FAIL" }
    );
    assert!(ok, "a prediction gain fell below 6/10: {}", lines.join(", "));
}

#[test]
fn a12_smoothed_step_converges_monotonically_to_exact() {
    let report = validate::softplus_convergence(100, 106).unwrap();
    println!(
        "smoothing convergence: {} instances, {}, final velocity gap {:.3e} (tol {:.0e}): {}",
        report.cases,
        report.detail,
        report.worst,
        report.tol,
        if report.passed { "pass" } else { "FAIL" }
    );
    assert!(report.passed, "{report}");
}
