//! Command implementations behind the `tlqg` CLI: plan, simulate, validate,
//! sweep. Each loads a scenario config, runs the pipeline, and persists CSV,
//! JSON, and SVG artifacts with frozen schemas (see `docs/config.md`).

use std::path::Path;

use serde::Serialize;

use crate::config::{parse_config, Scenario};
use crate::error::{Error, Result};
use crate::filters::propagate_nominal_covariances;
use crate::io::{self, CsvTable};
use crate::lqr::gain_schedule_for_plan;
use crate::models::step_dynamics;
use crate::montecarlo::{
    epsilon_sweep, estimate_error_stats, simulate_rollout, AbortReason, ErrorStats, SweepResult,
};
use crate::planner::{evaluate_plan_cost, solve_plan, NominalPlan};
use crate::svg;

/// Thresholds pinned by the validation contract.
pub mod thresholds {
    /// Zero-mean check: |mean| ≤ this many standard errors.
    pub const ZERO_MEAN_SIGMAS: f64 = 3.0;
    /// Gaussianity: |skewness| bound.
    pub const SKEWNESS_MAX: f64 = 0.15;
    /// Gaussianity: |excess kurtosis| bound.
    pub const EXCESS_KURTOSIS_MAX: f64 = 0.3;
    /// Moment checks need at least this many samples to resolve the bounds.
    pub const MOMENT_GATE_MIN_SAMPLES: usize = 1000;
    /// Acceptable log-log slope range of |mean cost gap| vs ε.
    pub const SLOPE_RANGE: (f64, f64) = (1.6, 2.4);
    /// Exit probabilities may rise by this many binomial standard errors.
    pub const MONOTONE_SIGMAS: f64 = 2.0;
}

/// CLI-level overrides applied to the parsed config.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub samples: Option<usize>,
}

/// How the --epsilon override lands in the scenario.
enum EpsilonTarget {
    /// plan/simulate: replaces the world noise scale.
    World,
    /// validate: replaces the epsilon list.
    List,
    /// sweep: replaces the epsilon grid.
    Grid,
}

fn load_scenario(
    config_path: &Path,
    overrides: &Overrides,
    target: EpsilonTarget,
) -> Result<Scenario> {
    let mut config = parse_config(config_path)?.config;
    if let Some(seed) = overrides.seed {
        config.experiment.seed = seed;
    }
    if let Some(n) = overrides.samples {
        config.experiment.n_samples = n;
    }
    if let Some(eps) = overrides.epsilon {
        match target {
            EpsilonTarget::World => config.world.epsilon = eps,
            EpsilonTarget::List => config.experiment.epsilon_list = vec![eps],
            EpsilonTarget::Grid => config.experiment.epsilon_grid = vec![eps],
        }
    }
    config.build()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PlanConstraints {
    pub terminal_ok: bool,
    pub control_ok: bool,
    pub barrier_clear: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub schema_version: u32,
    pub converged: bool,
    pub iterations: usize,
    pub cost: crate::planner::CostBreakdown,
    pub objective: f64,
    pub terminal_error: f64,
    pub max_control_norm: f64,
    /// Smallest signed clearance (distance minus radius and margin) of any
    /// nominal state to any obstacle; `None` without obstacles.
    pub min_obstacle_clearance: Option<f64>,
    pub constraints: PlanConstraints,
}

fn plan_report(plan: &NominalPlan, scenario: &Scenario) -> PlanReport {
    let problem = &scenario.problem;
    let terminal_error = (plan.states.last().unwrap().position() - problem.goal.position()).norm();
    let max_control_norm = plan.controls.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let min_obstacle_clearance = if problem.world.obstacles.is_empty() {
        None
    } else {
        Some(
            plan.states
                .iter()
                .flat_map(|s| {
                    problem
                        .world
                        .obstacles
                        .iter()
                        .map(move |o| o.clearance(s.x, s.y))
                })
                .fold(f64::INFINITY, f64::min),
        )
    };
    PlanReport {
        schema_version: crate::config::SCHEMA_VERSION,
        converged: plan.converged,
        iterations: plan.iterations,
        cost: plan.cost,
        objective: plan.cost.objective(),
        terminal_error,
        max_control_norm,
        min_obstacle_clearance,
        constraints: PlanConstraints {
            terminal_ok: terminal_error < problem.goal_radius,
            control_ok: max_control_norm <= problem.control_radius + 1e-6,
            barrier_clear: min_obstacle_clearance.map(|c| c > 0.0).unwrap_or(true),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_atomic(path, &text)
}

/// Solve the scenario and write plan.csv, plan.svg, and report.json.
pub fn cmd_plan(config_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<PlanReport> {
    let scenario = load_scenario(config_path, overrides, EpsilonTarget::World)?;
    let plan = solve_plan(&scenario.problem)?;
    let report = plan_report(&plan, &scenario);

    io::write_atomic(
        &out_dir.join("plan.csv"),
        &io::plan_to_csv(&plan, &scenario.problem),
    )?;
    io::write_atomic(
        &out_dir.join("plan.svg"),
        &svg::render_plan_svg(&plan, &scenario.problem),
    )?;
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Rebuild the plan from `plan.csv` in `out_dir`, checking that the states
/// are reproduced by the dynamics and match the scenario.
fn load_plan(scenario: &Scenario, out_dir: &Path) -> Result<NominalPlan> {
    let path = out_dir.join("plan.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::PlanArtifact(format!(
            "cannot read {} (run `tlqg plan` first): {e}",
            path.display()
        ))
    })?;
    let parsed = io::parse_plan_csv(&text)?;
    let problem = &scenario.problem;
    if parsed.controls.len() != problem.horizon {
        return Err(Error::PlanArtifact(format!(
            "plan horizon {} does not match config horizon {}",
            parsed.controls.len(),
            problem.horizon
        )));
    }
    let start = problem.start_belief.mean;
    let s0 = parsed.states[0];
    if (s0.x - start.x).abs() > 1e-9
        || (s0.y - start.y).abs() > 1e-9
        || (s0.theta - start.theta).abs() > 1e-9
    {
        return Err(Error::PlanArtifact(
            "plan start state does not match the config start".into(),
        ));
    }
    let mut state = s0;
    for (t, u) in parsed.controls.iter().enumerate() {
        state = step_dynamics(&state, u, problem.world.dt);
        let got = parsed.states[t + 1];
        if (got.x - state.x).abs() > 1e-9
            || (got.y - state.y).abs() > 1e-9
            || (got.theta - state.theta).abs() > 1e-9
        {
            return Err(Error::PlanArtifact(format!(
                "plan state at step {} is not reproduced by the dynamics",
                t + 1
            )));
        }
    }
    let covariances =
        propagate_nominal_covariances(&parsed.states, &parsed.controls, &problem.world)?;
    let cost = evaluate_plan_cost(&parsed.controls, problem)?;
    Ok(NominalPlan {
        controls: parsed.controls,
        states: parsed.states,
        covariances,
        cost,
        converged: true,
        iterations: 0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub seed: u64,
    pub epsilon: f64,
    pub realized_cost: f64,
    pub first_order_error: f64,
    pub max_deviation: f64,
    pub terminal_position_error: f64,
    pub collided: bool,
    pub abort: Option<AbortReason>,
    pub steps_completed: usize,
}

pub const EXEC_CSV_HEADER: &str = "t,x,y,theta,v,omega,innovation_norm";
pub const ESTIMATE_CSV_HEADER: &str =
    "t,xhat,yhat,thetahat,p00,p01,p02,p10,p11,p12,p20,p21,p22,trace_P";

/// Execute one seeded rollout of the stored plan and write exec.csv,
/// estimate.csv, and exec.svg.
pub fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<SimulateReport> {
    let scenario = load_scenario(config_path, overrides, EpsilonTarget::World)?;
    let plan = load_plan(&scenario, out_dir)?;
    let gains = gain_schedule_for_plan(&plan, &scenario.problem.world, &scenario.weights);
    let seed = scenario.experiment.seed;
    let rollout = simulate_rollout(&plan, &gains, &scenario.problem, seed)?;

    let mut exec = CsvTable::new(EXEC_CSV_HEADER);
    let mut estimate = CsvTable::new(ESTIMATE_CSV_HEADER);
    for (t, step) in rollout.trajectory.iter().enumerate() {
        let (v, omega) = if t < rollout.controls.len() {
            (rollout.controls[t].v, rollout.controls[t].omega)
        } else {
            (0.0, 0.0)
        };
        // Innovation norms are indexed by the step they update (t >= 1).
        let innovation = if t >= 1 && t - 1 < rollout.innovation_norms.len() {
            rollout.innovation_norms[t - 1]
        } else {
            0.0
        };
        exec.row(&[
            t.to_string(),
            io::format_float(step.true_state.x),
            io::format_float(step.true_state.y),
            io::format_float(step.true_state.theta),
            io::format_float(v),
            io::format_float(omega),
            io::format_float(innovation),
        ]);
        let p = step.belief.cov.matrix();
        let mut fields = vec![
            t.to_string(),
            io::format_float(step.belief.mean.x),
            io::format_float(step.belief.mean.y),
            io::format_float(step.belief.mean.theta),
        ];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(io::format_float(p[(i, j)]));
            }
        }
        fields.push(io::format_float(step.belief.cov.trace()));
        estimate.row(&fields);
    }
    io::write_atomic(&out_dir.join("exec.csv"), &exec.finish())?;
    io::write_atomic(&out_dir.join("estimate.csv"), &estimate.finish())?;

    let executed: Vec<_> = rollout.trajectory.iter().map(|s| s.true_state).collect();
    let estimated: Vec<_> = rollout.trajectory.iter().map(|s| s.belief.mean).collect();
    let est_covs: Vec<_> = rollout.trajectory.iter().map(|s| s.belief.cov).collect();
    io::write_atomic(
        &out_dir.join("exec.svg"),
        &svg::render_exec_svg(&plan, &scenario.problem, &executed, &estimated, &est_covs),
    )?;

    Ok(SimulateReport {
        schema_version: crate::config::SCHEMA_VERSION,
        seed,
        epsilon: scenario.problem.world.epsilon,
        realized_cost: rollout.realized_cost,
        first_order_error: rollout.first_order_error,
        max_deviation: rollout.max_deviation,
        terminal_position_error: rollout.terminal_position_error(&plan),
        collided: rollout.collided,
        abort: rollout.abort,
        steps_completed: rollout.controls.len(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidateEntry {
    pub epsilon: f64,
    #[serde(flatten)]
    pub stats: ErrorStats,
    pub zero_mean_pass: bool,
    /// `None` when the sample is too small to resolve the bound.
    pub skewness_pass: Option<bool>,
    pub excess_kurtosis_pass: Option<bool>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidateReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub seed: u64,
    pub zero_mean_sigmas: f64,
    pub skewness_max: f64,
    pub excess_kurtosis_max: f64,
    pub entries: Vec<ValidateEntry>,
    pub all_pass: bool,
}

pub const THEOREM3_CSV_HEADER: &str = "epsilon,n_samples,n_aborted,mean,std,std_error,skewness,\
excess_kurtosis,zero_mean_pass,skewness_pass,excess_kurtosis_pass";

fn validate_entry(epsilon: f64, stats: ErrorStats) -> ValidateEntry {
    let zero_mean_pass = stats.mean.abs() <= thresholds::ZERO_MEAN_SIGMAS * stats.std_error;
    let gated = stats.n_samples >= thresholds::MOMENT_GATE_MIN_SAMPLES;
    let skewness_pass = gated.then(|| stats.skewness.abs() <= thresholds::SKEWNESS_MAX);
    let excess_kurtosis_pass =
        gated.then(|| stats.excess_kurtosis.abs() <= thresholds::EXCESS_KURTOSIS_MAX);
    let pass =
        zero_mean_pass && skewness_pass.unwrap_or(true) && excess_kurtosis_pass.unwrap_or(true);
    ValidateEntry {
        epsilon,
        stats,
        zero_mean_pass,
        skewness_pass,
        excess_kurtosis_pass,
        pass,
    }
}

fn opt_bool(v: Option<bool>) -> String {
    match v {
        Some(true) => "true".into(),
        Some(false) => "false".into(),
        None => "na".into(),
    }
}

/// Solve the scenario and test the first-order cost error statistics at each
/// configured noise scale; writes theorem3.csv and theorem3.json.
pub fn cmd_validate(
    config_path: &Path,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<ValidateReport> {
    let scenario = load_scenario(config_path, overrides, EpsilonTarget::List)?;
    let plan = solve_plan(&scenario.problem)?;
    if !plan.converged {
        return Err(Error::InvalidArgument(
            "planner did not converge; cannot validate statistics around a non-feasible plan"
                .into(),
        ));
    }
    let gains = gain_schedule_for_plan(&plan, &scenario.problem.world, &scenario.weights);
    let n = scenario.experiment.n_samples;
    let seed = scenario.experiment.seed;

    let mut entries = Vec::new();
    for &eps in &scenario.experiment.epsilon_list {
        let problem_eps = scenario.problem.with_epsilon(eps);
        let plan_eps = plan.with_covariances_for(&problem_eps)?;
        let stats = estimate_error_stats(&plan_eps, &gains, &problem_eps, n, seed)?;
        entries.push(validate_entry(eps, stats));
    }
    let all_pass = entries.iter().all(|e| e.pass);
    let report = ValidateReport {
        schema_version: crate::config::SCHEMA_VERSION,
        n_samples: n,
        seed,
        zero_mean_sigmas: thresholds::ZERO_MEAN_SIGMAS,
        skewness_max: thresholds::SKEWNESS_MAX,
        excess_kurtosis_max: thresholds::EXCESS_KURTOSIS_MAX,
        entries,
        all_pass,
    };

    let mut csv = CsvTable::new(THEOREM3_CSV_HEADER);
    for e in &report.entries {
        csv.row(&[
            io::format_float(e.epsilon),
            e.stats.n_samples.to_string(),
            e.stats.n_aborted.to_string(),
            io::format_float(e.stats.mean),
            io::format_float(e.stats.std),
            io::format_float(e.stats.std_error),
            io::format_float(e.stats.skewness),
            io::format_float(e.stats.excess_kurtosis),
            e.zero_mean_pass.to_string(),
            opt_bool(e.skewness_pass),
            opt_bool(e.excess_kurtosis_pass),
        ]);
    }
    io::write_atomic(&out_dir.join("theorem3.csv"), &csv.finish())?;
    write_json(&out_dir.join("theorem3.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub seed: u64,
    pub delta: f64,
    pub sweep: SweepResult,
    pub fitted_slope: Option<f64>,
    pub slope_range: (f64, f64),
    /// `None` when the grid has a single point (no fit).
    pub slope_pass: Option<bool>,
    pub exit_monotone_pass: bool,
    pub all_pass: bool,
}

pub const SWEEP_CSV_HEADER: &str = "epsilon,n_samples,n_aborted,exit_probability,mean_cost_gap";

/// Exit probabilities must be nonincreasing as ε decreases, within the
/// allowed number of combined binomial standard errors.
fn exit_monotone(sweep: &SweepResult) -> bool {
    sweep.entries.windows(2).all(|pair| {
        let (hi, lo) = (&pair[0], &pair[1]);
        let se = |e: &crate::montecarlo::SweepEntry| {
            if e.n_samples == 0 {
                0.0
            } else {
                (e.exit_probability * (1.0 - e.exit_probability) / e.n_samples as f64).sqrt()
            }
        };
        let slack = thresholds::MONOTONE_SIGMAS * (se(hi).powi(2) + se(lo).powi(2)).sqrt();
        lo.exit_probability <= hi.exit_probability + slack + 1e-12
    })
}

/// Solve the scenario and sweep the noise scale; writes sweep.csv, sweep.svg,
/// and sweep.json.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<SweepReport> {
    let scenario = load_scenario(config_path, overrides, EpsilonTarget::Grid)?;
    let plan = solve_plan(&scenario.problem)?;
    if !plan.converged {
        return Err(Error::InvalidArgument(
            "planner did not converge; cannot sweep around a non-feasible plan".into(),
        ));
    }
    let gains = gain_schedule_for_plan(&plan, &scenario.problem.world, &scenario.weights);
    let n = scenario.experiment.n_samples;
    let seed = scenario.experiment.seed;
    let sweep = epsilon_sweep(
        &plan,
        &gains,
        &scenario.problem,
        &scenario.experiment.epsilon_grid,
        scenario.experiment.delta,
        n,
        seed,
    )?;

    let fitted_slope = sweep.fitted_slope();
    let slope_pass =
        fitted_slope.map(|s| s >= thresholds::SLOPE_RANGE.0 && s <= thresholds::SLOPE_RANGE.1);
    let exit_monotone_pass = exit_monotone(&sweep);
    let all_pass = slope_pass.unwrap_or(true) && exit_monotone_pass;

    let mut csv = CsvTable::new(SWEEP_CSV_HEADER);
    for e in &sweep.entries {
        csv.row(&[
            io::format_float(e.epsilon),
            e.n_samples.to_string(),
            e.n_aborted.to_string(),
            io::format_float(e.exit_probability),
            io::format_float(e.mean_cost_gap),
        ]);
    }
    io::write_atomic(&out_dir.join("sweep.csv"), &csv.finish())?;
    io::write_atomic(&out_dir.join("sweep.svg"), &svg::render_sweep_svg(&sweep))?;
    let report = SweepReport {
        schema_version: crate::config::SCHEMA_VERSION,
        n_samples: n,
        seed,
        delta: sweep.delta,
        sweep,
        fitted_slope,
        slope_range: thresholds::SLOPE_RANGE,
        slope_pass,
        exit_monotone_pass,
        all_pass,
    };
    write_json(&out_dir.join("sweep.json"), &report)?;
    Ok(report)
}
