//! Seeded Monte Carlo execution of the closed loop and the statistics used
//! to validate it: first-order cost error moments, ε sweeps of exit
//! probability and cost gap, and paired open- vs closed-loop comparisons.
//!
//! Every rollout draws from ChaCha streams keyed by (seed, stream tag), so
//! results are bit-identical regardless of worker count and rollouts can run
//! in parallel. Aggregations fold results in rollout-index order.

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{ekf_step, BeliefState, Covariance};
use crate::lqr::{apply_policy, GainSchedule};
use crate::models::{measure, step_dynamics, Control, State};
use crate::planner::{barrier_cost, barrier_gradient, NominalPlan, PlanProblem};

/// Fraction of aborted rollouts above which statistics are rejected.
pub const ABORT_BUDGET: f64 = 0.01;

const STREAM_INIT: u64 = 0;
const STREAM_PROCESS: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;

/// Joint true-state / belief sample along an executed trajectory.
#[derive(Clone, Copy, Debug)]
pub struct RolloutState {
    pub true_state: State,
    pub belief: BeliefState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    DegenerateGeometry,
    NotPositiveDefinite,
}

/// One executed trajectory with its realized cost and deviation summary.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub trajectory: Vec<RolloutState>,
    pub controls: Vec<Control>,
    /// Realized cost J with the same stage cost as the planner objective.
    pub realized_cost: f64,
    /// First-order expansion term of J − J^p in the realized deviations.
    pub first_order_error: f64,
    /// max_t ‖x_t − x^p_t‖ (heading wrapped).
    pub max_deviation: f64,
    /// ‖z_{t+1} − h(x̂⁻_{t+1})‖ per completed step, bearings wrapped.
    pub innovation_norms: Vec<f64>,
    pub collided: bool,
    pub seed: u64,
    pub abort: Option<AbortReason>,
}

impl RolloutResult {
    pub fn aborted(&self) -> bool {
        self.abort.is_some()
    }

    /// Euclidean distance of the terminal position from the nominal one.
    pub fn terminal_position_error(&self, plan: &NominalPlan) -> f64 {
        let last = self.trajectory.last().unwrap().true_state;
        (last.position() - plan.states.last().unwrap().position()).norm()
    }
}

/// Per-step gradients of the stage costs with respect to belief mean,
/// covariance, and control, evaluated on the nominal trajectory.
#[derive(Clone, Debug)]
pub struct CostJacobians {
    /// ∂c_t/∂x̂ at x^p_t (barrier gradient), t = 0..K.
    pub mean: Vec<Vector3<f64>>,
    /// ∂c_t/∂P as a matrix (identity: gradient of the trace), t = 0..K.
    pub cov: Vec<Matrix3<f64>>,
    /// ∂c_t/∂u at u^p_t (2 W^u u^p_t), t = 0..K−1.
    pub control: Vec<Vector2<f64>>,
}

/// Moments of the first-order error sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ErrorStats {
    pub n_samples: usize,
    pub n_aborted: usize,
    pub mean: f64,
    pub std: f64,
    pub std_error: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// One ε entry of the sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub n_samples: usize,
    pub n_aborted: usize,
    /// P(max_t ‖x_t − x^p_t‖ > δ/2), estimated over the kept rollouts.
    pub exit_probability: f64,
    /// mean(J − J^p) with J^p recomputed at this ε.
    pub mean_cost_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub delta: f64,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    /// Least-squares slope of ln|mean cost gap| against ln ε; `None` with
    /// fewer than two usable entries.
    pub fn fitted_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|e| e.mean_cost_gap.abs() > 0.0 && e.mean_cost_gap.is_finite())
            .map(|e| (e.epsilon.ln(), e.mean_cost_gap.abs().ln()))
            .collect();
        fit_slope(&pts)
    }
}

/// Paired open-loop vs closed-loop outcome over shared noise streams.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairedComparison {
    pub n_samples: usize,
    pub n_aborted: usize,
    pub closed_mean_terminal_error: f64,
    pub open_mean_terminal_error: f64,
    pub closed_mean_max_deviation: f64,
    pub open_mean_max_deviation: f64,
    /// mean(open terminal error − closed terminal error), paired per seed.
    pub mean_improvement: f64,
    /// Standard error of the paired differences.
    pub improvement_std_error: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Symmetric PSD square root via eigendecomposition; covariances may be
/// singular (e.g. rank-deficient process noise), so Cholesky is not enough.
fn psd_sqrt3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = nalgebra::SymmetricEigen::new(*m);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn check_consistent(plan: &NominalPlan, gains: &GainSchedule, problem: &PlanProblem) -> Result<()> {
    let k = problem.horizon;
    if plan.controls.len() != k || plan.states.len() != k + 1 || plan.covariances.len() != k + 1 {
        return Err(Error::InvalidArgument(format!(
            "plan does not match horizon {k}: {} controls, {} states, {} covariances",
            plan.controls.len(),
            plan.states.len(),
            plan.covariances.len()
        )));
    }
    if gains.horizon() != k {
        return Err(Error::InvalidArgument(format!(
            "gain schedule horizon {} does not match problem horizon {k}",
            gains.horizon()
        )));
    }
    let e2 = problem.world.epsilon * problem.world.epsilon;
    let p0 = problem.world.sigma_x0 * e2;
    let diff = (plan.covariances[0].matrix() - p0).norm();
    if diff > 1e-9 * p0.norm().max(1.0) {
        return Err(Error::InvalidArgument(
            "plan covariances are inconsistent with the problem's noise scale; \
             re-propagate them for this ε"
                .into(),
        ));
    }
    Ok(())
}

/// Nominal cost J^p: the rollout stage cost evaluated on the nominal
/// trajectory and planned covariances.
pub fn nominal_cost(plan: &NominalPlan, problem: &PlanProblem) -> f64 {
    let world = &problem.world;
    let k = plan.horizon();
    let mut cost = 0.0;
    for t in 0..k {
        let u = plan.controls[t].to_vector();
        cost += plan.covariances[t].trace()
            + (u.transpose() * problem.effort_weight * u)[0]
            + barrier_cost(&plan.states[t], &world.obstacles, &problem.barrier);
    }
    cost += plan.covariances[k].trace()
        + barrier_cost(&plan.states[k], &world.obstacles, &problem.barrier);
    cost
}

/// Analytic stage-cost gradients along the nominal trajectory; validated
/// against finite differences in the test suite.
pub fn cost_jacobians(plan: &NominalPlan, problem: &PlanProblem) -> CostJacobians {
    let k = plan.horizon();
    let obstacles = &problem.world.obstacles;
    let mean = (0..=k)
        .map(|t| barrier_gradient(&plan.states[t], obstacles, &problem.barrier))
        .collect();
    let cov = vec![Matrix3::identity(); k + 1];
    let control = (0..k)
        .map(|t| problem.effort_weight * plan.controls[t].to_vector() * 2.0)
        .collect();
    CostJacobians { mean, cov, control }
}

/// First-order cost error: inner products of the stage-cost gradients with
/// the realized belief/control deviations from the nominal.
pub fn first_order_error(
    rollout: &RolloutResult,
    plan: &NominalPlan,
    jacobians: &CostJacobians,
) -> f64 {
    let k = plan.horizon();
    let mut j1 = 0.0;
    for t in 0..=k {
        let step = &rollout.trajectory[t];
        let mean_dev = step.belief.mean.deviation_from(&plan.states[t]);
        j1 += jacobians.mean[t].dot(&mean_dev);
        let cov_dev = step.belief.cov.matrix() - plan.covariances[t].matrix();
        j1 += jacobians.cov[t].component_mul(&cov_dev).sum();
        if t < k {
            let u_dev = rollout.controls[t].to_vector() - plan.controls[t].to_vector();
            j1 += jacobians.control[t].dot(&u_dev);
        }
    }
    j1
}

fn simulate_with_jacobians(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    jacobians: &CostJacobians,
    seed: u64,
) -> RolloutResult {
    let world = &problem.world;
    let eps = world.epsilon;
    let k = plan.horizon();
    let n_z = world.measurement_dim();

    let sqrt_x0 = psd_sqrt3(&world.sigma_x0);
    let sqrt_w = psd_sqrt3(&world.sigma_omega);
    // sigma_nu is PD by the world invariant.
    let sqrt_nu = world.sigma_nu.clone().cholesky().expect("sigma_nu PD").l();

    let mut rng_init = stream_rng(seed, STREAM_INIT);
    let mut rng_process = stream_rng(seed, STREAM_PROCESS);
    let mut rng_meas = stream_rng(seed, STREAM_MEASUREMENT);

    // x₀ ~ N(x^p₀, ε²Σ_{x₀}); the estimate starts at the nominal mean.
    let init_noise = sqrt_x0 * normal3(&mut rng_init) * eps;
    let xp0 = plan.states[0];
    let x0 = State::new(
        xp0.x + init_noise[0],
        xp0.y + init_noise[1],
        xp0.theta + init_noise[2],
    );
    let belief0 = BeliefState {
        mean: xp0,
        cov: Covariance::new(world.sigma_x0 * (eps * eps)),
    };

    let mut trajectory = Vec::with_capacity(k + 1);
    trajectory.push(RolloutState {
        true_state: x0,
        belief: belief0,
    });
    let mut controls = Vec::with_capacity(k);
    let mut innovation_norms = Vec::with_capacity(k);
    let mut abort = None;

    for t in 0..k {
        let current = trajectory[t];
        let u = apply_policy(t, plan, gains, &current.belief.mean, problem.control_radius);

        let w = world.diffusion * (sqrt_w * normal3(&mut rng_process)) * eps;
        let det = step_dynamics(&current.true_state, &u, world.dt);
        let x_next = State::new(det.x + w[0], det.y + w[1], det.theta + w[2]);

        let nu_std = DVector::from_fn(n_z, |_, _| rng_meas.sample(StandardNormal));
        let z = match measure(&x_next, world) {
            Ok(z_clean) => z_clean + &sqrt_nu * nu_std * eps,
            Err(_) => {
                abort = Some(AbortReason::DegenerateGeometry);
                break;
            }
        };
        let predicted_mean = step_dynamics(&current.belief.mean, &u, world.dt);
        let innovation_norm = match measure(&predicted_mean, world) {
            Ok(z_pred) => {
                let mut innovation = &z - z_pred;
                crate::models::wrap_innovation(&mut innovation);
                innovation.norm()
            }
            Err(_) => {
                abort = Some(AbortReason::DegenerateGeometry);
                break;
            }
        };
        let belief = match ekf_step(&current.belief, &u, &z, world) {
            Ok(b) => b,
            Err(Error::DegenerateGeometry { .. }) => {
                abort = Some(AbortReason::DegenerateGeometry);
                break;
            }
            Err(_) => {
                abort = Some(AbortReason::NotPositiveDefinite);
                break;
            }
        };
        controls.push(u);
        innovation_norms.push(innovation_norm);
        trajectory.push(RolloutState {
            true_state: x_next,
            belief,
        });
    }

    let collided = trajectory.iter().any(|s| {
        world
            .obstacles
            .iter()
            .any(|o| o.contains(s.true_state.x, s.true_state.y))
    });
    let max_deviation = trajectory
        .iter()
        .enumerate()
        .map(|(t, s)| s.true_state.deviation_from(&plan.states[t]).norm())
        .fold(0.0, f64::max);

    let mut result = RolloutResult {
        trajectory,
        controls,
        realized_cost: f64::NAN,
        first_order_error: f64::NAN,
        max_deviation,
        innovation_norms,
        collided,
        seed,
        abort,
    };
    if result.abort.is_none() {
        let mut cost = 0.0;
        for t in 0..k {
            let step = &result.trajectory[t];
            let u = result.controls[t].to_vector();
            cost += step.belief.cov.trace()
                + (u.transpose() * problem.effort_weight * u)[0]
                + barrier_cost(&step.belief.mean, &world.obstacles, &problem.barrier);
        }
        let last = &result.trajectory[k];
        cost += last.belief.cov.trace()
            + barrier_cost(&last.belief.mean, &world.obstacles, &problem.barrier);
        result.realized_cost = cost;
        result.first_order_error = first_order_error(&result, plan, jacobians);
    }
    result
}

/// Execute one closed-loop rollout. All randomness comes from ChaCha streams
/// keyed by (seed, stream tag); the same seed reproduces the result bit for
/// bit. Degenerate geometry or a non-PD innovation aborts and flags the
/// rollout instead of failing the call.
pub fn simulate_rollout(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    seed: u64,
) -> Result<RolloutResult> {
    check_consistent(plan, gains, problem)?;
    let jacobians = cost_jacobians(plan, problem);
    Ok(simulate_with_jacobians(
        plan, gains, problem, &jacobians, seed,
    ))
}

fn run_batch(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    n: usize,
    seed: u64,
) -> Vec<RolloutResult> {
    let jacobians = cost_jacobians(plan, problem);
    (0..n)
        .into_par_iter()
        .map(|i| {
            simulate_with_jacobians(
                plan,
                gains,
                problem,
                &jacobians,
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}

fn enforce_abort_budget(kept: usize, aborted: usize) -> Result<()> {
    let total = kept + aborted;
    if total > 0 && (aborted as f64) > ABORT_BUDGET * (total as f64) {
        return Err(Error::StatisticalValidity { aborted, total });
    }
    Ok(())
}

fn moments(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let std = if values.len() > 1 {
        (m2 / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    (mean, std, std / n.sqrt(), skew, kurt)
}

/// Sample moments of the first-order error over `n` independent rollouts
/// with seeds `seed..seed+n`. Aborted rollouts are excluded and counted;
/// more than 1% of them invalidates the statistics.
pub fn estimate_error_stats(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    n: usize,
    seed: u64,
) -> Result<ErrorStats> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 samples for error statistics, got {n}"
        )));
    }
    check_consistent(plan, gains, problem)?;
    let results = run_batch(plan, gains, problem, n, seed);
    let values: Vec<f64> = results
        .iter()
        .filter(|r| !r.aborted())
        .map(|r| r.first_order_error)
        .collect();
    let n_aborted = n - values.len();
    enforce_abort_budget(values.len(), n_aborted)?;
    let (mean, std, std_error, skewness, excess_kurtosis) = moments(&values);
    Ok(ErrorStats {
        n_samples: values.len(),
        n_aborted,
        mean,
        std,
        std_error,
        skewness,
        excess_kurtosis,
    })
}

/// Exit probability and mean cost gap per noise scale. The plan's controls
/// stay fixed; planned covariances and J^p are recomputed for each ε, and
/// rollout `i` consumes the same underlying noise at every ε.
pub fn epsilon_sweep(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    epsilons: &[f64],
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon grid".into()));
    }
    for pair in epsilons.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::InvalidArgument(
                "epsilon grid must be strictly decreasing".into(),
            ));
        }
    }
    if epsilons.iter().any(|e| *e <= 0.0) {
        return Err(Error::InvalidArgument("epsilons must be > 0".into()));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail the check
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be > 0".into()));
    }

    let mut entries = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let problem_eps = problem.with_epsilon(eps);
        let plan_eps = plan.with_covariances_for(&problem_eps)?;
        let jp = nominal_cost(&plan_eps, &problem_eps);
        let results = run_batch(&plan_eps, gains, &problem_eps, n, seed);
        let kept: Vec<&RolloutResult> = results.iter().filter(|r| !r.aborted()).collect();
        let n_aborted = n - kept.len();
        enforce_abort_budget(kept.len(), n_aborted)?;
        let exits = kept
            .iter()
            .filter(|r| r.max_deviation > delta / 2.0)
            .count();
        let mean_cost_gap =
            kept.iter().map(|r| r.realized_cost - jp).sum::<f64>() / kept.len().max(1) as f64;
        entries.push(SweepEntry {
            epsilon: eps,
            n_samples: kept.len(),
            n_aborted,
            exit_probability: exits as f64 / kept.len().max(1) as f64,
            mean_cost_gap,
        });
    }
    Ok(SweepResult { delta, entries })
}

/// Paired rollouts with the synthesized gains versus all-zero gains; pair i
/// replays the same noise streams in both arms.
pub fn compare_openloop_closedloop(
    plan: &NominalPlan,
    gains: &GainSchedule,
    problem: &PlanProblem,
    n: usize,
    seed: u64,
) -> Result<PairedComparison> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 samples for the paired comparison, got {n}"
        )));
    }
    check_consistent(plan, gains, problem)?;
    let zero_gains = GainSchedule::zero(problem.horizon);
    let jacobians = cost_jacobians(plan, problem);
    let pairs: Vec<(RolloutResult, RolloutResult)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            (
                simulate_with_jacobians(plan, gains, problem, &jacobians, s),
                simulate_with_jacobians(plan, &zero_gains, problem, &jacobians, s),
            )
        })
        .collect();

    let kept: Vec<&(RolloutResult, RolloutResult)> = pairs
        .iter()
        .filter(|(c, o)| !c.aborted() && !o.aborted())
        .collect();
    let n_aborted = n - kept.len();
    enforce_abort_budget(kept.len(), n_aborted)?;

    let m = kept.len() as f64;
    let closed_terms: Vec<f64> = kept
        .iter()
        .map(|(c, _)| c.terminal_position_error(plan))
        .collect();
    let open_terms: Vec<f64> = kept
        .iter()
        .map(|(_, o)| o.terminal_position_error(plan))
        .collect();
    let diffs: Vec<f64> = open_terms
        .iter()
        .zip(&closed_terms)
        .map(|(o, c)| o - c)
        .collect();
    let (mean_improvement, diff_std, improvement_std_error, _, _) = moments(&diffs);
    let _ = diff_std;

    Ok(PairedComparison {
        n_samples: kept.len(),
        n_aborted,
        closed_mean_terminal_error: closed_terms.iter().sum::<f64>() / m,
        open_mean_terminal_error: open_terms.iter().sum::<f64>() / m,
        closed_mean_max_deviation: kept.iter().map(|(c, _)| c.max_deviation).sum::<f64>() / m,
        open_mean_max_deviation: kept.iter().map(|(_, o)| o.max_deviation).sum::<f64>() / m,
        mean_improvement,
        improvement_std_error,
    })
}

/// Least-squares slope of y against x; `None` with fewer than two points.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}
