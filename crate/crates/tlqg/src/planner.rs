//! Nominal trajectory optimization: minimize covariance trace plus control
//! effort plus an obstacle barrier, subject to a terminal goal ball and a
//! control-norm bound handled by exterior quadratic penalties.
//!
//! The solver is direct single shooting over the stacked control vector with
//! a penalty method outside and gradient descent with Armijo backtracking
//! inside. The whole solve is single-threaded and deterministic: identical
//! problems yield bit-identical plans.

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{propagate_nominal_covariances, BeliefState, Covariance};
use crate::models::{step_dynamics, Control, Obstacle, State, WorldModel};

/// Obstacle barrier: weight M and sharpness k (1/m) of the sigmoid penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub weight: f64,
    pub sharpness: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            weight: 10.0,
            sharpness: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    Zero,
    Steer,
}

/// Knobs of the penalty-method solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub gradient_tolerance: f64,
    pub penalty_weight_initial: f64,
    pub penalty_growth: f64,
    pub fd_step: f64,
    pub init_strategy: InitStrategy,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            max_outer_iters: 6,
            max_inner_iters: 400,
            gradient_tolerance: 1e-4,
            penalty_weight_initial: 10.0,
            penalty_growth: 10.0,
            fd_step: 1e-5,
            init_strategy: InitStrategy::Zero,
        }
    }
}

/// One trajectory-planning instance.
#[derive(Clone, Debug)]
pub struct PlanProblem {
    pub start_belief: BeliefState,
    /// Goal pose; the terminal constraint applies to the position part only.
    pub goal: State,
    pub goal_radius: f64,
    pub control_radius: f64,
    pub horizon: usize,
    /// Per-step control effort weight W^u.
    pub effort_weight: Matrix2<f64>,
    pub world: WorldModel,
    pub barrier: BarrierParams,
    pub optimizer: OptimizerParams,
}

impl PlanProblem {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.horizon < 1 {
            v.push("horizon must be >= 1".into());
        }
        if !(self.goal_radius > 0.0) {
            v.push("goal_radius must be > 0".into());
        }
        if !(self.control_radius > 0.0) {
            v.push("control_radius must be > 0".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Copy of the problem with a different noise scale; the start belief
    /// covariance is rescaled to match ε²Σ_{x₀}.
    pub fn with_epsilon(&self, epsilon: f64) -> PlanProblem {
        let mut p = self.clone();
        p.world = self.world.with_epsilon(epsilon);
        p.start_belief.cov = Covariance::new(p.world.sigma_x0 * (epsilon * epsilon));
        p
    }
}

/// Objective pieces plus the penalty residuals of the two constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Σ_{t=1..K} tr(P⁺_t)
    pub trace_term: f64,
    /// Σ_t uᵀ W^u u
    pub effort_term: f64,
    /// Σ_{t=0..K} barrier(x^p_t)
    pub barrier_term: f64,
    /// max(0, ‖x^p_K − x_g‖ − r_g)²
    pub terminal_residual: f64,
    /// Σ_t max(0, ‖u_t‖ − r_u)²
    pub control_residual: f64,
}

impl CostBreakdown {
    pub fn objective(&self) -> f64 {
        self.trace_term + self.effort_term + self.barrier_term
    }

    pub fn penalty_residuals(&self) -> f64 {
        self.terminal_residual + self.control_residual
    }

    pub fn penalized_total(&self, penalty_weight: f64) -> f64 {
        self.objective() + penalty_weight * self.penalty_residuals()
    }
}

/// Optimized nominal trajectory with its planned covariances.
#[derive(Clone, Debug)]
pub struct NominalPlan {
    pub controls: Vec<Control>,
    pub states: Vec<State>,
    pub covariances: Vec<Covariance>,
    pub cost: CostBreakdown,
    pub converged: bool,
    pub iterations: usize,
}

impl NominalPlan {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Re-propagate the planned covariances for a problem with a different
    /// noise scale; states and controls are untouched.
    pub fn with_covariances_for(&self, problem: &PlanProblem) -> Result<NominalPlan> {
        let mut p = self.clone();
        p.covariances =
            propagate_nominal_covariances(&self.states, &self.controls, &problem.world)?;
        Ok(p)
    }
}

/// Deterministic forward rollout of the noise-free dynamics.
pub fn rollout_nominal(controls: &[Control], start: &State, world: &WorldModel) -> Vec<State> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*start);
    for u in controls {
        let next = step_dynamics(states.last().unwrap(), u, world.dt);
        states.push(next);
    }
    states
}

/// Smooth obstacle penalty: Σᵢ M / (1 + exp(k·clearanceᵢ)), where clearance
/// is distance to the disc edge minus the safety margin.
pub fn barrier_cost(state: &State, obstacles: &[Obstacle], params: &BarrierParams) -> f64 {
    obstacles
        .iter()
        .map(|o| params.weight / (1.0 + (params.sharpness * o.clearance(state.x, state.y)).exp()))
        .sum()
}

/// Gradient of `barrier_cost` with respect to the state (θ component is 0).
pub fn barrier_gradient(
    state: &State,
    obstacles: &[Obstacle],
    params: &BarrierParams,
) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    for o in obstacles {
        let dx = state.x - o.cx;
        let dy = state.y - o.cy;
        let d = (dx * dx + dy * dy).sqrt();
        if d < 1e-12 {
            continue; // flat at the exact center
        }
        let e = (params.sharpness * o.clearance(state.x, state.y)).exp();
        let denom = (1.0 + e) * (1.0 + e);
        let dds = -params.weight * params.sharpness * e / denom;
        g[0] += dds * dx / d;
        g[1] += dds * dy / d;
    }
    g
}

/// Full cost of a candidate control sequence: covariance trace, effort,
/// barrier, and the two constraint residuals.
pub fn evaluate_plan_cost(controls: &[Control], problem: &PlanProblem) -> Result<CostBreakdown> {
    if controls.len() != problem.horizon {
        return Err(Error::InvalidArgument(format!(
            "expected {} controls, got {}",
            problem.horizon,
            controls.len()
        )));
    }
    let world = &problem.world;
    let states = rollout_nominal(controls, &problem.start_belief.mean, world);
    let covs = propagate_nominal_covariances(&states, controls, world)?;

    let trace_term: f64 = covs.iter().skip(1).map(Covariance::trace).sum();
    let effort_term: f64 = controls
        .iter()
        .map(|u| {
            let uv = u.to_vector();
            (uv.transpose() * problem.effort_weight * uv)[0]
        })
        .sum();
    let barrier_term: f64 = states
        .iter()
        .map(|s| barrier_cost(s, &world.obstacles, &problem.barrier))
        .sum();

    let terminal_gap =
        (states.last().unwrap().position() - problem.goal.position()).norm() - problem.goal_radius;
    let terminal_residual = terminal_gap.max(0.0).powi(2);
    let control_residual: f64 = controls
        .iter()
        .map(|u| (u.norm() - problem.control_radius).max(0.0).powi(2))
        .sum();

    Ok(CostBreakdown {
        trace_term,
        effort_term,
        barrier_term,
        terminal_residual,
        control_residual,
    })
}

fn flatten(controls: &[Control]) -> Vec<f64> {
    let mut u = Vec::with_capacity(2 * controls.len());
    for c in controls {
        u.push(c.v);
        u.push(c.omega);
    }
    u
}

fn unflatten(u: &[f64]) -> Vec<Control> {
    u.chunks_exact(2)
        .map(|c| Control::new(c[0], c[1]))
        .collect()
}

fn penalized_cost(u: &[f64], problem: &PlanProblem, penalty_weight: f64) -> Result<f64> {
    Ok(evaluate_plan_cost(&unflatten(u), problem)?.penalized_total(penalty_weight))
}

/// Central-difference gradient of the penalized cost, one coordinate at a
/// time with step `fd_step`.
pub fn cost_gradient(
    controls: &[Control],
    problem: &PlanProblem,
    penalty_weight: f64,
) -> Result<Vec<f64>> {
    let h = problem.optimizer.fd_step;
    let mut u = flatten(controls);
    let mut g = vec![0.0; u.len()];
    for i in 0..u.len() {
        let orig = u[i];
        u[i] = orig + h;
        let fp = penalized_cost(&u, problem, penalty_weight)?;
        u[i] = orig - h;
        let fm = penalized_cost(&u, problem, penalty_weight)?;
        u[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Starting control sequence: all zeros, or a proportional
/// heading-then-advance steer toward the goal clipped to the control ball.
pub fn initial_guess(problem: &PlanProblem, strategy: InitStrategy) -> Vec<Control> {
    match strategy {
        InitStrategy::Zero => vec![Control::zero(); problem.horizon],
        InitStrategy::Steer => {
            let mut controls = Vec::with_capacity(problem.horizon);
            let mut s = problem.start_belief.mean;
            for _ in 0..problem.horizon {
                let to_goal = problem.goal.position() - s.position();
                let dist = to_goal.norm();
                let u = if dist <= problem.goal_radius {
                    Control::zero()
                } else {
                    let heading_err =
                        crate::models::wrap_angle(to_goal.y.atan2(to_goal.x) - s.theta);
                    let v = 0.5 * dist * heading_err.cos().max(0.0);
                    Control::new(v, 0.5 * heading_err).clamp_norm(problem.control_radius)
                };
                s = step_dynamics(&s, &u, problem.world.dt);
                controls.push(u);
            }
            controls
        }
    }
}

struct InnerResult {
    u: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    cost: f64,
    iterations: usize,
}

/// Gradient descent with backtracking (halving) line search under the Armijo
/// condition with constant 1e-4. The accepted cost sequence is non-increasing.
fn minimize_inner(
    mut u: Vec<f64>,
    problem: &PlanProblem,
    penalty_weight: f64,
) -> Result<InnerResult> {
    const ARMIJO: f64 = 1e-4;
    let params = &problem.optimizer;
    let mut cost = penalized_cost(&u, problem, penalty_weight)?;
    let mut trial_step = 1.0;
    let mut iterations = 0;
    for _ in 0..params.max_inner_iters {
        let g = cost_gradient(&unflatten(&u), problem, penalty_weight)?;
        let gsq: f64 = g.iter().map(|x| x * x).sum();
        if gsq.sqrt() <= params.gradient_tolerance {
            break;
        }
        let mut alpha = trial_step;
        let mut accepted = false;
        while alpha > 1e-18 {
            let cand: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - alpha * gi).collect();
            let c = penalized_cost(&cand, problem, penalty_weight)?;
            if c <= cost - ARMIJO * alpha * gsq {
                u = cand;
                cost = c;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break; // no descent along -g at any representable step
        }
        trial_step = (alpha * 2.0).min(1e3);
    }
    Ok(InnerResult {
        u,
        cost,
        iterations,
    })
}

/// Solve the planning problem with the penalty method. Non-convergence is
/// reported through `converged = false`, not as an error.
pub fn solve_plan(problem: &PlanProblem) -> Result<NominalPlan> {
    problem.validate()?;
    let params = &problem.optimizer;
    let u_init = flatten(&initial_guess(problem, params.init_strategy));
    let mut u = u_init.clone();
    let mut weight = params.penalty_weight_initial;
    let mut iterations = 0;

    for outer in 0..params.max_outer_iters {
        // Never start a round above the initial guess under the round's
        // weight; keeps the final cost <= the initial-guess cost.
        if penalized_cost(&u, problem, weight)? > penalized_cost(&u_init, problem, weight)? {
            u.copy_from_slice(&u_init);
        }
        let inner = minimize_inner(u, problem, weight)?;
        u = inner.u;
        iterations += inner.iterations;
        if outer + 1 < params.max_outer_iters {
            weight *= params.penalty_growth;
        }
    }

    let controls = unflatten(&u);
    let states = rollout_nominal(&controls, &problem.start_belief.mean, &problem.world);
    let covariances = propagate_nominal_covariances(&states, &controls, &problem.world)?;
    let cost = evaluate_plan_cost(&controls, problem)?;

    let terminal_ok =
        (states.last().unwrap().position() - problem.goal.position()).norm() < problem.goal_radius;
    let controls_ok = controls
        .iter()
        .all(|c| c.norm() <= problem.control_radius + 1e-6);

    Ok(NominalPlan {
        controls,
        states,
        covariances,
        cost,
        converged: terminal_ok && controls_ok,
        iterations,
    })
}

/// Final penalty weight after all outer rounds; the scale under which the
/// improvement guarantee (final cost <= initial-guess cost) holds.
pub fn final_penalty_weight(params: &OptimizerParams) -> f64 {
    params.penalty_weight_initial
        * params
            .penalty_growth
            .powi(params.max_outer_iters as i32 - 1)
}
