//! Scenario configuration: JSON schema, validation, and construction of the
//! planning problem. Validation collects every violation instead of stopping
//! at the first, and the parser never panics on malformed input.
//!
//! The schema is documented in `docs/config.md`.

use nalgebra::{DMatrix, Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::{BeliefState, Covariance};
use crate::lqr::CostWeights;
use crate::models::{Landmark, Obstacle, State, WorldModel};
use crate::planner::{BarrierParams, OptimizerParams, PlanProblem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkConfig {
    pub id: String,
    pub px: f64,
    pub py: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    #[serde(default)]
    pub safety_margin: f64,
}

/// World section: geometry plus noise covariances as row-major flat lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub landmarks: Vec<LandmarkConfig>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub epsilon: f64,
    /// 3×3 process noise Σ_ω, row-major.
    pub sigma_omega: Vec<f64>,
    /// n_z×n_z measurement noise Σ_ν, row-major, n_z = 2 × landmark count.
    pub sigma_nu: Vec<f64>,
    /// 3×3 initial covariance Σ_{x₀}, row-major.
    pub sigma_x0: Vec<f64>,
    /// Optional 3×3 diffusion matrix G, row-major; identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<f64>>,
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Start pose [x, y, θ].
    pub start: [f64; 3],
    /// Scale factor applied to Σ_{x₀} for the start belief.
    #[serde(default = "default_one")]
    pub start_cov_scale: f64,
    /// Goal pose [x, y, θ]; the terminal ball applies to the position.
    pub goal: [f64; 3],
    pub goal_radius: f64,
    pub control_radius: f64,
    pub horizon: usize,
    /// 2×2 control effort weight W^u, row-major.
    pub effort_weight: Vec<f64>,
    /// 3×3 state deviation weight W^x for feedback synthesis, row-major.
    pub state_weight: Vec<f64>,
    #[serde(default)]
    pub barrier: BarrierParams,
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Noise scales checked by `validate`.
    pub epsilon_list: Vec<f64>,
    /// Strictly decreasing noise scales swept by `sweep`.
    pub epsilon_grid: Vec<f64>,
    /// Tube diameter δ; the exit event is max deviation > δ/2.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub world: WorldConfig,
    pub problem: ProblemConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerParams,
    pub experiment: ExperimentConfig,
}

fn default_optimizer() -> OptimizerParams {
    OptimizerParams::default()
}

/// Everything a command needs: the built problem, feedback weights, and the
/// experiment parameters, plus the raw config for re-serialization.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub problem: PlanProblem,
    pub weights: CostWeights,
    pub experiment: ExperimentConfig,
    pub config: ScenarioConfig,
}

fn check_finite(name: &str, values: &[f64], violations: &mut Vec<String>) -> bool {
    if values.iter().any(|v| !v.is_finite()) {
        violations.push(format!("{name} contains a non-finite value"));
        false
    } else {
        true
    }
}

fn parse_square(
    name: &str,
    values: &[f64],
    dim: usize,
    violations: &mut Vec<String>,
) -> Option<DMatrix<f64>> {
    let expected = dim.checked_mul(dim)?;
    if values.len() != expected {
        violations.push(format!(
            "{name} must have {expected} entries ({dim}x{dim} row-major), got {}",
            values.len()
        ));
        return None;
    }
    if !check_finite(name, values, violations) {
        return None;
    }
    let m = DMatrix::from_row_slice(dim, dim, values);
    let asym = (&m - m.transpose()).abs().max();
    if asym > 1e-12 {
        violations.push(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        ));
        return None;
    }
    Some(m)
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail the check
fn require_psd(name: &str, m: &DMatrix<f64>, violations: &mut Vec<String>) {
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if !(min_eig >= -1e-12) {
        violations.push(format!(
            "{name} must be positive semidefinite (min eigenvalue {min_eig:.3e})"
        ));
    }
}

fn require_pd(name: &str, m: &DMatrix<f64>, violations: &mut Vec<String>) {
    if m.clone().cholesky().is_none() {
        violations.push(format!("{name} must be positive definite"));
    }
}

fn to_matrix3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

impl ScenarioConfig {
    /// Validate and build the scenario. Every violation is reported.
    /// Comparisons are kept in negated form so NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn build(&self) -> Result<Scenario> {
        let mut violations = Vec::new();

        if self.schema_version != SCHEMA_VERSION {
            violations.push(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }

        let w = &self.world;
        for (i, lm) in w.landmarks.iter().enumerate() {
            if !lm.px.is_finite() || !lm.py.is_finite() {
                violations.push(format!("world.landmarks[{i}] has a non-finite coordinate"));
            }
        }
        for (i, o) in w.obstacles.iter().enumerate() {
            if ![o.cx, o.cy, o.radius, o.safety_margin]
                .iter()
                .all(|v| v.is_finite())
            {
                violations.push(format!("world.obstacles[{i}] has a non-finite field"));
            }
        }
        if !(w.dt > 0.0) {
            violations.push(format!("world.dt must be > 0, got {}", w.dt));
        }
        if !(w.epsilon >= 0.0) {
            violations.push(format!("world.epsilon must be >= 0, got {}", w.epsilon));
        }

        let n_z = 2usize.checked_mul(w.landmarks.len()).unwrap_or(0);
        let sigma_omega = parse_square("world.sigma_omega", &w.sigma_omega, 3, &mut violations);
        let sigma_x0 = parse_square("world.sigma_x0", &w.sigma_x0, 3, &mut violations);
        let sigma_nu = if w.landmarks.is_empty() {
            violations.push("world.landmarks must contain at least one landmark".into());
            None
        } else {
            parse_square("world.sigma_nu", &w.sigma_nu, n_z, &mut violations)
        };
        let diffusion = match &w.diffusion {
            None => Some(Matrix3::identity()),
            Some(values) => {
                if values.len() != 9 {
                    violations.push(format!(
                        "world.diffusion must have 9 entries (3x3 row-major), got {}",
                        values.len()
                    ));
                    None
                } else if !check_finite("world.diffusion", values, &mut violations) {
                    None
                } else {
                    Some(Matrix3::from_row_slice(values))
                }
            }
        };
        if let Some(m) = &sigma_omega {
            require_psd("world.sigma_omega", m, &mut violations);
        }
        if let Some(m) = &sigma_x0 {
            require_psd("world.sigma_x0", m, &mut violations);
        }
        if let Some(m) = &sigma_nu {
            require_pd("world.sigma_nu", m, &mut violations);
        }

        let p = &self.problem;
        check_finite("problem.start", &p.start, &mut violations);
        check_finite("problem.goal", &p.goal, &mut violations);
        if !(p.start_cov_scale >= 0.0) {
            violations.push(format!(
                "problem.start_cov_scale must be >= 0, got {}",
                p.start_cov_scale
            ));
        }
        if !(p.goal_radius > 0.0) {
            violations.push(format!(
                "problem.goal_radius must be > 0, got {}",
                p.goal_radius
            ));
        }
        if !(p.control_radius > 0.0) {
            violations.push(format!(
                "problem.control_radius must be > 0, got {}",
                p.control_radius
            ));
        }
        if p.horizon < 1 {
            violations.push("problem.horizon must be >= 1".into());
        }
        let effort = parse_square(
            "problem.effort_weight",
            &p.effort_weight,
            2,
            &mut violations,
        );
        if let Some(m) = &effort {
            // The same W^u weights the control deviation in the feedback
            // synthesis, which needs strict positive definiteness.
            require_pd("problem.effort_weight", m, &mut violations);
        }
        let state_weight =
            parse_square("problem.state_weight", &p.state_weight, 3, &mut violations);
        if let Some(m) = &state_weight {
            require_psd("problem.state_weight", m, &mut violations);
        }
        if !(p.barrier.weight >= 0.0) {
            violations.push(format!(
                "problem.barrier.weight must be >= 0, got {}",
                p.barrier.weight
            ));
        }
        if !(p.barrier.sharpness > 0.0) {
            violations.push(format!(
                "problem.barrier.sharpness must be > 0, got {}",
                p.barrier.sharpness
            ));
        }

        let o = &self.optimizer;
        for (name, v) in [
            ("optimizer.max_outer_iters", o.max_outer_iters as f64),
            ("optimizer.max_inner_iters", o.max_inner_iters as f64),
        ] {
            if v < 1.0 {
                violations.push(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("optimizer.gradient_tolerance", o.gradient_tolerance),
            ("optimizer.penalty_weight_initial", o.penalty_weight_initial),
            ("optimizer.fd_step", o.fd_step),
        ] {
            if !(v > 0.0) {
                violations.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(o.penalty_growth > 1.0) {
            violations.push(format!(
                "optimizer.penalty_growth must be > 1, got {}",
                o.penalty_growth
            ));
        }

        let e = &self.experiment;
        if e.n_samples < 1 {
            violations.push("experiment.n_samples must be >= 1".into());
        }
        if e.epsilon_list.is_empty() {
            violations.push("experiment.epsilon_list must not be empty".into());
        }
        if e.epsilon_list
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            violations.push("experiment.epsilon_list entries must be finite and >= 0".into());
        }
        if e.epsilon_grid.is_empty() {
            violations.push("experiment.epsilon_grid must not be empty".into());
        }
        if e.epsilon_grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            violations.push("experiment.epsilon_grid entries must be finite and > 0".into());
        }
        if e.epsilon_grid.windows(2).any(|p| p[1] >= p[0]) {
            violations.push("experiment.epsilon_grid must be strictly decreasing".into());
        }
        if !(e.delta > 0.0) {
            violations.push(format!("experiment.delta must be > 0, got {}", e.delta));
        }

        let (
            Some(sigma_omega),
            Some(sigma_nu),
            Some(sigma_x0),
            Some(diffusion),
            Some(effort),
            Some(state_weight),
        ) = (
            sigma_omega,
            sigma_nu,
            sigma_x0,
            diffusion,
            effort,
            state_weight,
        )
        else {
            return Err(Error::Config(violations));
        };

        let landmarks = w
            .landmarks
            .iter()
            .map(|l| Landmark {
                id: l.id.clone(),
                px: l.px,
                py: l.py,
            })
            .collect();
        let obstacles = w
            .obstacles
            .iter()
            .map(|o| Obstacle {
                cx: o.cx,
                cy: o.cy,
                radius: o.radius,
                safety_margin: o.safety_margin,
            })
            .collect();
        let world = match WorldModel::new(
            landmarks,
            obstacles,
            w.dt,
            w.epsilon,
            to_matrix3(&sigma_omega),
            sigma_nu,
            to_matrix3(&sigma_x0) * p.start_cov_scale,
            diffusion,
        ) {
            Ok(world) => world,
            Err(Error::Config(mut v)) => {
                violations.append(&mut v);
                return Err(Error::Config(violations));
            }
            Err(other) => return Err(other),
        };
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }

        let e2 = world.epsilon * world.epsilon;
        let start_belief = BeliefState {
            mean: State::new(p.start[0], p.start[1], p.start[2]),
            cov: Covariance::new(world.sigma_x0 * e2),
        };
        let effort_weight = Matrix2::from_fn(|i, j| effort[(i, j)]);
        let problem = PlanProblem {
            start_belief,
            goal: State::new(p.goal[0], p.goal[1], p.goal[2]),
            goal_radius: p.goal_radius,
            control_radius: p.control_radius,
            horizon: p.horizon,
            effort_weight,
            world,
            barrier: p.barrier,
            optimizer: self.optimizer,
        };
        let weights = CostWeights {
            wx: to_matrix3(&state_weight),
            wu: effort_weight,
        };
        Ok(Scenario {
            problem,
            weights,
            experiment: e.clone(),
            config: self.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parse a scenario config from a JSON string. Total: returns an error (never
/// panics) on any malformed input.
pub fn parse_config_str(text: &str) -> Result<Scenario> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    config.build()
}

/// Parse a scenario config from a file.
pub fn parse_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
