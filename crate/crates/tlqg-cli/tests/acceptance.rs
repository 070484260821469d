//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `cargo test --test acceptance -- --nocapture`). The
//! statistical criteria run on the bundled fig1 scenario with its pinned
//! seed; every tolerance is written in this file, next to its assertion.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlqg::config::{parse_config, Scenario};
use tlqg::filters::{innovation_covariance, joseph_update, update_covariance, Covariance};
use tlqg::lqr::{backward_riccati, gain_schedule_for_plan, CostWeights, GainSchedule};
use tlqg::models::{
    dynamics_jacobians, measure, measurement_jacobian, step_dynamics, wrap_angle, wrap_innovation,
    Control, Landmark, State, WorldModel,
};
use tlqg::montecarlo::{
    compare_openloop_closedloop, cost_jacobians, epsilon_sweep, estimate_error_stats, SweepResult,
};
use tlqg::planner::{
    barrier_cost, cost_gradient, evaluate_plan_cost, final_penalty_weight, initial_guess,
    rollout_nominal, solve_plan, NominalPlan,
};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

struct Fixture {
    scenario: Scenario,
    plan: NominalPlan,
    gains: GainSchedule,
    solve_seconds: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let scenario = parse_config(&scenario_path("fig1.json")).expect("fig1 scenario parses");
        let started = Instant::now();
        let plan = solve_plan(&scenario.problem).expect("fig1 plan solves");
        let solve_seconds = started.elapsed().as_secs_f64();
        let gains = gain_schedule_for_plan(&plan, &scenario.problem.world, &scenario.weights);
        Fixture {
            scenario,
            plan,
            gains,
            solve_seconds,
        }
    })
}

/// Plan and problem re-scaled to a different noise level (controls fixed,
/// covariances re-propagated).
fn at_epsilon(f: &Fixture, eps: f64) -> (NominalPlan, tlqg::planner::PlanProblem) {
    let problem = f.scenario.problem.with_epsilon(eps);
    let plan = f.plan.with_covariances_for(&problem).unwrap();
    (plan, problem)
}

static SWEEP: OnceLock<SweepResult> = OnceLock::new();

fn sweep() -> &'static SweepResult {
    SWEEP.get_or_init(|| {
        let f = fixture();
        epsilon_sweep(
            &f.plan,
            &f.gains,
            &f.scenario.problem,
            &[0.16, 0.08, 0.04, 0.02],
            f.scenario.experiment.delta,
            1000,
            f.scenario.experiment.seed,
        )
        .unwrap()
    })
}

#[test]
fn criterion_01_zero_mean_first_order_error() {
    let f = fixture();
    let (plan, problem) = at_epsilon(f, 0.05);
    let started = Instant::now();
    let stats =
        estimate_error_stats(&plan, &f.gains, &problem, 2000, f.scenario.experiment.seed).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let bound = 3.0 * stats.std_error;
    let pass = stats.mean.abs() <= bound;
    println!(
        "criterion 1 {}: zero-mean first-order error: |mean|={:.3e} <= 3*se={:.3e} \
         (n={}, eps=0.05, {:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        stats.mean.abs(),
        bound,
        stats.n_samples,
        elapsed
    );
    assert!(pass, "|mean|={:.3e} > {:.3e}", stats.mean.abs(), bound);
    assert!(elapsed < 60.0, "statistics took {elapsed:.1}s (>60s)");
}

#[test]
fn criterion_02_gaussianity_of_first_order_error() {
    let f = fixture();
    let (plan, problem) = at_epsilon(f, 0.02);
    let stats =
        estimate_error_stats(&plan, &f.gains, &problem, 5000, f.scenario.experiment.seed).unwrap();
    let pass = stats.skewness.abs() <= 0.15 && stats.excess_kurtosis.abs() <= 0.3;
    println!(
        "criterion 2 {}: Gaussianity: |skewness|={:.3} <= 0.15, |excess kurtosis|={:.3} <= 0.3 \
         (n={}, eps=0.02)",
        if pass { "PASS" } else { "FAIL" },
        stats.skewness.abs(),
        stats.excess_kurtosis.abs(),
        stats.n_samples
    );
    assert!(
        stats.skewness.abs() <= 0.15,
        "skewness {:.3}",
        stats.skewness
    );
    assert!(
        stats.excess_kurtosis.abs() <= 0.3,
        "excess kurtosis {:.3}",
        stats.excess_kurtosis
    );
}

#[test]
fn criterion_03_second_order_cost_gap_slope() {
    let slope = sweep().fitted_slope().expect("slope fit over 4 points");
    let pass = (1.6..=2.4).contains(&slope);
    println!(
        "criterion 3 {}: log-log cost gap slope {:.3} in [1.6, 2.4] (n=1000 per eps)",
        if pass { "PASS" } else { "FAIL" },
        slope
    );
    assert!(pass, "slope {slope:.3} outside [1.6, 2.4]");
}

#[test]
fn criterion_04_exit_probability_monotonicity() {
    let s = sweep();
    let mut pass = true;
    let mut detail = String::new();
    for pair in s.entries.windows(2) {
        let (hi, lo) = (&pair[0], &pair[1]);
        let se = |e: &tlqg::montecarlo::SweepEntry| {
            (e.exit_probability * (1.0 - e.exit_probability) / e.n_samples as f64).sqrt()
        };
        let slack = 2.0 * (se(hi).powi(2) + se(lo).powi(2)).sqrt();
        if lo.exit_probability > hi.exit_probability + slack + 1e-12 {
            pass = false;
        }
    }
    for e in &s.entries {
        detail.push_str(&format!(" p({})={:.3}", e.epsilon, e.exit_probability));
    }
    println!(
        "criterion 4 {}: exit probabilities nonincreasing within 2 binomial se:{}",
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    assert!(pass, "exit probabilities not monotone:{detail}");
}

#[test]
fn criterion_05_feedback_beats_open_loop() {
    let f = fixture();
    let (plan, problem) = at_epsilon(f, 0.1);
    let cmp =
        compare_openloop_closedloop(&plan, &f.gains, &problem, 500, f.scenario.experiment.seed)
            .unwrap();
    let margin = 3.0 * cmp.improvement_std_error;
    let pass = cmp.mean_improvement > margin;
    println!(
        "criterion 5 {}: paired feedback power: open {:.4} m vs closed {:.4} m, \
         improvement {:.4} > 3*se={:.4} (n={}, eps=0.1)",
        if pass { "PASS" } else { "FAIL" },
        cmp.open_mean_terminal_error,
        cmp.closed_mean_terminal_error,
        cmp.mean_improvement,
        margin,
        cmp.n_samples
    );
    assert!(
        pass,
        "improvement {:.4} <= margin {:.4}",
        cmp.mean_improvement, margin
    );
}

#[test]
fn criterion_06_filter_update_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut max_diff = 0.0f64;
    for i in 0..1000 {
        let n_lm = 1 + (i % 3);
        let landmarks: Vec<Landmark> = (0..n_lm)
            .map(|j| Landmark {
                id: format!("L{j}"),
                px: rng.random_range(-3.0..3.0),
                py: rng.random_range(-3.0..3.0),
            })
            .collect();
        let n_z = 2 * n_lm;
        let m = DMatrix::from_fn(n_z, n_z, |_, _| rng.random_range(-1.0..1.0));
        let sigma_nu = &m * m.transpose() + DMatrix::identity(n_z, n_z) * 0.1;
        let world = WorldModel::new(
            landmarks,
            vec![],
            1.0,
            rng.random_range(0.05..1.0),
            Matrix3::identity() * 0.01,
            sigma_nu,
            Matrix3::identity() * 0.01,
            Matrix3::identity(),
        )
        .unwrap();
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let scale = rng.random_range(0.1..5.0);
        let p = Covariance::new(a * a.transpose() * scale + Matrix3::identity() * 1e-6);
        let h = DMatrix::from_fn(n_z, 3, |_, _| rng.random_range(-2.0..2.0));
        let s = innovation_covariance(&p, &h, &world).unwrap();
        let plain = update_covariance(&p, &h, &s).unwrap();
        let joseph = joseph_update(&p, &h, &world).unwrap();
        max_diff = max_diff.max((plain.matrix() - joseph.matrix()).abs().max());
        assert!(
            plain.trace() <= p.trace() + 1e-12,
            "trace increased: {} -> {}",
            p.trace(),
            plain.trace()
        );
    }
    let pass = max_diff <= 1e-10;
    println!(
        "criterion 6 {}: plain vs Joseph update max |diff| = {:.3e} <= 1e-10 over 1000 \
         random SPD instances; trace never increased",
        if pass { "PASS" } else { "FAIL" },
        max_diff
    );
    assert!(pass, "max diff {max_diff:.3e}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn criterion_07_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let world = WorldModel::new(
        vec![
            Landmark {
                id: "a".into(),
                px: 1.5,
                py: 0.5,
            },
            Landmark {
                id: "b".into(),
                px: -1.0,
                py: 2.0,
            },
        ],
        vec![],
        1.0,
        0.3,
        Matrix3::identity() * 0.01,
        DMatrix::identity(4, 4) * 0.01,
        Matrix3::identity() * 0.01,
        Matrix3::identity(),
    )
    .unwrap();

    // A, B, H against central differences (angle-aware) on 100 samples.
    let mut worst = 0.0f64;
    let fd = 1e-6;
    for _ in 0..100 {
        let s = State::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let u = Control::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (a, b) = dynamics_jacobians(&s, &u, 1.0);
        let mut a_fd = Matrix3::zeros();
        let mut b_fd = Matrix3x2::zeros();
        for j in 0..3 {
            let mut p = s.to_vector();
            let mut m = s.to_vector();
            p[j] += fd;
            m[j] -= fd;
            let fp = step_dynamics(
                &State {
                    x: p[0],
                    y: p[1],
                    theta: p[2],
                },
                &u,
                1.0,
            );
            let fm = step_dynamics(
                &State {
                    x: m[0],
                    y: m[1],
                    theta: m[2],
                },
                &u,
                1.0,
            );
            a_fd.set_column(
                j,
                &(Vector3::new(fp.x - fm.x, fp.y - fm.y, wrap_angle(fp.theta - fm.theta))
                    / (2.0 * fd)),
            );
        }
        for j in 0..2 {
            let mut p = u.to_vector();
            let mut m = u.to_vector();
            p[j] += fd;
            m[j] -= fd;
            let fp = step_dynamics(&s, &Control::from_vector(&p), 1.0);
            let fm = step_dynamics(&s, &Control::from_vector(&m), 1.0);
            b_fd.set_column(
                j,
                &(Vector3::new(fp.x - fm.x, fp.y - fm.y, wrap_angle(fp.theta - fm.theta))
                    / (2.0 * fd)),
            );
        }
        worst = worst.max((a - a_fd).norm() / a_fd.norm());
        worst = worst.max((b - b_fd).norm() / b_fd.norm());

        let h = measurement_jacobian(&s, &world).unwrap();
        let mut h_fd = DMatrix::zeros(4, 3);
        for j in 0..3 {
            let mut p = s.to_vector();
            let mut m = s.to_vector();
            p[j] += fd;
            m[j] -= fd;
            let zp = measure(
                &State {
                    x: p[0],
                    y: p[1],
                    theta: p[2],
                },
                &world,
            )
            .unwrap();
            let zm = measure(
                &State {
                    x: m[0],
                    y: m[1],
                    theta: m[2],
                },
                &world,
            )
            .unwrap();
            let mut dz = zp - zm;
            wrap_innovation(&mut dz);
            h_fd.set_column(j, &(dz / (2.0 * fd)));
        }
        worst = worst.max((&h - &h_fd).norm() / h_fd.norm());
    }
    assert!(worst <= 1e-5, "A/B/H worst rel err {worst:.3e}");

    // Penalized-cost gradient against an independent FD (different step)
    // on 100 random control vectors of a small problem.
    let scenario = parse_config(&scenario_path("minimal.json")).unwrap();
    let mut problem = scenario.problem.clone();
    problem.horizon = 4;
    let weight = 7.3;
    let mut worst_g = 0.0f64;
    for _ in 0..100 {
        let controls: Vec<Control> = (0..4)
            .map(|_| Control::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let g = cost_gradient(&controls, &problem, weight).unwrap();
        let step = 2e-6;
        let mut g_fd = vec![0.0; 8];
        for (i, slot) in g_fd.iter_mut().enumerate() {
            let perturb = |delta: f64| {
                let mut c = controls.clone();
                if i % 2 == 0 {
                    c[i / 2].v += delta;
                } else {
                    c[i / 2].omega += delta;
                }
                evaluate_plan_cost(&c, &problem)
                    .unwrap()
                    .penalized_total(weight)
            };
            *slot = (perturb(step) - perturb(-step)) / (2.0 * step);
        }
        let num: f64 = g
            .iter()
            .zip(&g_fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = g_fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1.0);
        worst_g = worst_g.max(num / den);
    }
    assert!(worst_g <= 1e-5, "cost gradient worst rel err {worst_g:.3e}");

    // Stage-cost jacobians against FD on 100 random plans.
    let mut worst_j = 0.0f64;
    for _ in 0..100 {
        let controls: Vec<Control> = (0..4)
            .map(|_| Control::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)))
            .collect();
        let states = rollout_nominal(&controls, &problem.start_belief.mean, &problem.world);
        let covariances =
            tlqg::filters::propagate_nominal_covariances(&states, &controls, &problem.world)
                .unwrap();
        let cost = evaluate_plan_cost(&controls, &problem).unwrap();
        let plan = NominalPlan {
            controls,
            states,
            covariances,
            cost,
            converged: true,
            iterations: 0,
        };
        let jac = cost_jacobians(&plan, &problem);
        let h = 1e-6;
        for t in 0..=plan.horizon() {
            let s = plan.states[t];
            for axis in 0..2 {
                let shift = |d: f64| {
                    let mut q = [s.x, s.y, s.theta];
                    q[axis] += d;
                    barrier_cost(
                        &State {
                            x: q[0],
                            y: q[1],
                            theta: q[2],
                        },
                        &problem.world.obstacles,
                        &problem.barrier,
                    )
                };
                let fd_v = (shift(h) - shift(-h)) / (2.0 * h);
                worst_j = worst_j.max(rel_err(jac.mean[t][axis], fd_v));
            }
            if t < plan.horizon() {
                let u = plan.controls[t].to_vector();
                for axis in 0..2 {
                    let shift = |d: f64| {
                        let mut q = u;
                        q[axis] += d;
                        (q.transpose() * problem.effort_weight * q)[0]
                    };
                    let fd_v = (shift(h) - shift(-h)) / (2.0 * h);
                    worst_j = worst_j.max(rel_err(jac.control[t][axis], fd_v));
                }
            }
        }
    }
    let pass = worst_j <= 1e-5;
    println!(
        "criterion 7 {}: A/B/H rel err {:.2e}, cost gradient rel err {:.2e}, stage-cost \
         jacobian rel err {:.2e}, all <= 1e-5 over 100 samples each",
        if pass { "PASS" } else { "FAIL" },
        worst,
        worst_g,
        worst_j
    );
    assert!(pass, "stage-cost jacobian worst rel err {worst_j:.3e}");
}

#[test]
fn criterion_08_lqr_scalar_closed_forms() {
    // Scalar surrogate embedded in the first coordinate.
    let embed = |a: f64, b: f64| {
        let mut a_m = Matrix3::zeros();
        a_m[(0, 0)] = a;
        let mut b_m = Matrix3x2::zeros();
        b_m[(0, 0)] = b;
        (a_m, b_m)
    };
    let mut wx = Matrix3::zeros();
    wx[(0, 0)] = 1.0;
    let weights = CostWeights {
        wx,
        wu: Matrix2::identity(),
    };

    let (a, b) = embed(1.0, 1.0);
    let one = backward_riccati(&[a], &[b], &weights);
    let p0 = one.riccati[0][(0, 0)];
    assert!((p0 - 1.5).abs() <= 1e-12, "K=1 P^f_0 = {p0}");
    assert!((one.gains[0][(0, 0)] - 0.5).abs() <= 1e-12);

    let long = backward_riccati(&vec![a; 200], &vec![b; 200], &weights);
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    let limit_err = (long.riccati[0][(0, 0)] - golden).abs();
    assert!(
        limit_err <= 1e-9,
        "long-horizon limit error {limit_err:.3e}"
    );

    // Noiseless linear policy cost equals the value function.
    let (a, b) = embed(1.2, 0.7);
    let k = 30;
    let sched = backward_riccati(&vec![a; k], &vec![b; k], &weights);
    let x0 = Vector3::new(0.9, 0.0, 0.0);
    let mut x = x0;
    let mut cost = 0.0;
    for t in 0..k {
        let u = -sched.gains[t] * x;
        cost += (x.transpose() * weights.wx * x)[0] + (u.transpose() * weights.wu * u)[0];
        x = a * x + b * u;
    }
    cost += (x.transpose() * weights.wx * x)[0];
    let value = (x0.transpose() * sched.riccati[0] * x0)[0];
    let value_err = (cost - value).abs();
    let pass = value_err <= 1e-9;
    println!(
        "criterion 8 {}: scalar Riccati closed forms: P^f_0(K=1)=1.5 exact, long-horizon \
         limit err {:.1e} <= 1e-9, policy cost vs value err {:.1e} <= 1e-9",
        if pass { "PASS" } else { "FAIL" },
        limit_err,
        value_err
    );
    assert!(pass, "policy cost {cost} vs value {value}");
}

#[test]
fn criterion_09_fig1_planner_feasibility() {
    let f = fixture();
    let plan = &f.plan;
    let problem = &f.scenario.problem;
    let terminal = (plan.states.last().unwrap().position() - problem.goal.position()).norm();
    let max_u = plan.controls.iter().map(Control::norm).fold(0.0, f64::max);
    let min_clearance = plan
        .states
        .iter()
        .flat_map(|s| {
            problem
                .world
                .obstacles
                .iter()
                .map(move |o| o.clearance(s.x, s.y))
        })
        .fold(f64::INFINITY, f64::min);

    let w_final = final_penalty_weight(&problem.optimizer);
    let init = initial_guess(problem, problem.optimizer.init_strategy);
    let init_cost = evaluate_plan_cost(&init, problem)
        .unwrap()
        .penalized_total(w_final);
    let plan_cost = plan.cost.penalized_total(w_final);

    let pass = plan.converged
        && terminal < problem.goal_radius
        && max_u <= problem.control_radius + 1e-6
        && min_clearance > 0.0
        && plan_cost <= init_cost
        && f.solve_seconds < 300.0;
    println!(
        "criterion 9 {}: fig1 plan: converged={}, terminal {:.4} < {:.2}, max ||u|| {:.3} <= {:.2}, \
         min clearance {:.3} > 0, cost {:.4} <= initial {:.4}, solve {:.1}s < 300s",
        if pass { "PASS" } else { "FAIL" },
        plan.converged,
        terminal,
        problem.goal_radius,
        max_u,
        problem.control_radius,
        min_clearance,
        plan_cost,
        init_cost,
        f.solve_seconds
    );
    assert!(pass);
}

#[test]
fn criterion_10_byte_identical_outputs() {
    let bin = env!("CARGO_BIN_EXE_tlqg");
    let cfg = scenario_path("minimal.json");
    let cfg = cfg.to_str().unwrap();
    let base = std::env::temp_dir().join(format!("tlqg-acc10-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);

    let run = |out: &Path, threads: &str| {
        for sub in ["plan", "simulate", "validate", "sweep"] {
            let st = std::process::Command::new(bin)
                .args([sub, "--config", cfg, "--out", out.to_str().unwrap()])
                .env("TLQG_THREADS", threads)
                .output()
                .unwrap();
            assert!(
                st.status.success(),
                "{sub} failed: {}",
                String::from_utf8_lossy(&st.stderr)
            );
        }
    };
    let out_a = base.join("t1-run1");
    let out_b = base.join("t1-run2");
    let out_c = base.join("t8-run1");
    run(&out_a, "1");
    run(&out_b, "1");
    run(&out_c, "8");

    let files = [
        "plan.csv",
        "exec.csv",
        "estimate.csv",
        "theorem3.csv",
        "sweep.csv",
    ];
    for f in files {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        let c = std::fs::read(out_c.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between repeated runs");
        assert_eq!(a, c, "{f} differs across TLQG_THREADS");
    }
    println!(
        "criterion 10 PASS: {} CSV outputs byte-identical across repeated runs and \
         TLQG_THREADS settings",
        files.len()
    );
    let _ = std::fs::remove_dir_all(&base);
}

// Regression baselines on the bundled scenario, frozen from the first
// verified run (deterministic for the pinned seed).

#[test]
fn regression_small_noise_deviation() {
    let f = fixture();
    let (plan, problem) = at_epsilon(f, 0.01);
    let mut below = 0;
    for i in 0..100 {
        let r = tlqg::montecarlo::simulate_rollout(
            &plan,
            &f.gains,
            &problem,
            f.scenario.experiment.seed + i,
        )
        .unwrap();
        assert!(!r.aborted());
        if r.max_deviation < 0.2 {
            below += 1;
        }
    }
    println!("regression: eps=0.01 max deviation < 0.2 m in {below}/100 rollouts (>= 99 required)");
    assert!(below >= 99);
}

#[test]
fn regression_bundled_seed_execution_stays_clear_of_margins() {
    let f = fixture();
    let r = tlqg::montecarlo::simulate_rollout(
        &f.plan,
        &f.gains,
        &f.scenario.problem,
        f.scenario.experiment.seed,
    )
    .unwrap();
    assert!(!r.aborted());
    assert!(!r.collided);
    let min_clearance = r
        .trajectory
        .iter()
        .flat_map(|s| {
            f.scenario
                .problem
                .world
                .obstacles
                .iter()
                .map(move |o| o.clearance(s.true_state.x, s.true_state.y))
        })
        .fold(f64::INFINITY, f64::min);
    println!(
        "regression: bundled-seed executed path min margin clearance {min_clearance:.4} > 0"
    );
    assert!(min_clearance > 0.0);
}
