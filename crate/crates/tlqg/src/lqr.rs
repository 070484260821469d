//! Time-varying LQR synthesis around the optimized nominal trajectory via
//! the backward dynamic Riccati recursion, and the resulting feedback policy
//! u_t = u^p_t − L_t(x̂_t − x^p_t).

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2};

use crate::models::{dynamics_jacobians, Control, State, WorldModel};
use crate::planner::NominalPlan;

/// Quadratic deviation weights: W^x PSD on state, W^u PD on control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub wx: Matrix3<f64>,
    pub wu: Matrix2<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            wx: Matrix3::identity(),
            wu: Matrix2::identity() * 0.1,
        }
    }
}

/// Feedback gains L_0 … L_{K−1} and Riccati value matrices P^f_0 … P^f_K.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    pub gains: Vec<Matrix2x3<f64>>,
    pub riccati: Vec<Matrix3<f64>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// All-zero gains of the same horizon; the open-loop arm of comparisons.
    pub fn zero(horizon: usize) -> GainSchedule {
        GainSchedule {
            gains: vec![Matrix2x3::zeros(); horizon],
            riccati: vec![Matrix3::zeros(); horizon + 1],
        }
    }
}

/// Backward Riccati recursion with terminal condition P^f_K = W^x:
/// L_t = (W^u + B_tᵀ P^f_{t+1} B_t)⁻¹ B_tᵀ P^f_{t+1} A_t,
/// P^f_t = A_tᵀ P^f_{t+1} A_t − A_tᵀ P^f_{t+1} B_t L_t + W^x.
pub fn backward_riccati(
    a_seq: &[Matrix3<f64>],
    b_seq: &[Matrix3x2<f64>],
    weights: &CostWeights,
) -> GainSchedule {
    assert_eq!(a_seq.len(), b_seq.len());
    let horizon = a_seq.len();
    let mut riccati = vec![Matrix3::zeros(); horizon + 1];
    let mut gains = vec![Matrix2x3::zeros(); horizon];
    riccati[horizon] = weights.wx;
    for t in (0..horizon).rev() {
        let a = &a_seq[t];
        let b = &b_seq[t];
        let p_next = &riccati[t + 1];
        let m = weights.wu + b.transpose() * p_next * b;
        let chol = m
            .cholesky()
            .expect("W^u positive definite makes the gain system nonsingular");
        let l = chol.solve(&(b.transpose() * p_next * a));
        let p = a.transpose() * p_next * a - a.transpose() * p_next * b * l + weights.wx;
        riccati[t] = (p + p.transpose()) * 0.5;
        gains[t] = l;
    }
    GainSchedule { gains, riccati }
}

/// Gain schedule for a plan: Jacobians evaluated along the nominal.
pub fn gain_schedule_for_plan(
    plan: &NominalPlan,
    world: &WorldModel,
    weights: &CostWeights,
) -> GainSchedule {
    let (a_seq, b_seq): (Vec<_>, Vec<_>) = plan
        .controls
        .iter()
        .enumerate()
        .map(|(t, u)| dynamics_jacobians(&plan.states[t], u, world.dt))
        .unzip();
    backward_riccati(&a_seq, &b_seq, weights)
}

/// Feedback policy at step t: nominal control minus gain times the wrapped
/// deviation of the estimate from the nominal state, clipped to ‖u‖ ≤ r_u.
pub fn apply_policy(
    t: usize,
    plan: &NominalPlan,
    gains: &GainSchedule,
    estimate: &State,
    control_radius: f64,
) -> Control {
    let deviation = estimate.deviation_from(&plan.states[t]);
    let u = plan.controls[t].to_vector() - gains.gains[t] * deviation;
    Control::from_vector(&u).clamp_norm(control_radius)
}
