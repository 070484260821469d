//! Discrete Kalman covariance recursions and the execution-time EKF.
//!
//! The planner constrains the filter covariance along the nominal trajectory
//! (linearized at the nominal); execution re-linearizes at the running
//! estimate. Both share the algebra in this module. Covariances are
//! re-symmetrized after every operation to bound round-off drift.

use nalgebra::{Const, DMatrix, DVector, Dyn, Matrix3, OMatrix};

use crate::error::{Error, Result};
use crate::models::{
    dynamics_jacobians, measure, measurement_jacobian, step_dynamics, wrap_innovation, Control,
    State, WorldModel,
};

type Matrix3xX = OMatrix<f64, Const<3>, Dyn>;

/// Symmetric PSD 3×3 covariance. Constructors re-symmetrize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance(Matrix3<f64>);

impl Covariance {
    pub fn new(m: Matrix3<f64>) -> Self {
        Self((m + m.transpose()) * 0.5)
    }

    pub fn zeros() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// 2×2 position block, used for covariance ellipses.
    pub fn position_block(&self) -> nalgebra::Matrix2<f64> {
        self.0.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// Gaussian belief over the robot state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefState {
    pub mean: State,
    pub cov: Covariance,
}

/// Time update: P⁻ = A P⁺ Aᵀ + ε² G Σ_ω Gᵀ.
pub fn predict_covariance(p_plus: &Covariance, a: &Matrix3<f64>, world: &WorldModel) -> Covariance {
    let e2 = world.epsilon * world.epsilon;
    let noise = world.diffusion * world.sigma_omega * world.diffusion.transpose();
    Covariance::new(a * p_plus.matrix() * a.transpose() + noise * e2)
}

/// Innovation covariance S = H P⁻ Hᵀ + ε² Σ_ν; verified positive definite.
pub fn innovation_covariance(
    p_minus: &Covariance,
    h: &DMatrix<f64>,
    world: &WorldModel,
) -> Result<DMatrix<f64>> {
    let e2 = world.epsilon * world.epsilon;
    let mut s = h * p_minus.matrix() * h.transpose() + &world.sigma_nu * e2;
    s = (&s + &s.transpose()) * 0.5;
    if s.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("innovation covariance"));
    }
    Ok(s)
}

/// Kalman gain K = P⁻ Hᵀ S⁻¹, via a Cholesky solve of S.
pub fn kalman_gain(p_minus: &Covariance, h: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Matrix3xX> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
    // K = (S⁻¹ H P⁻)ᵀ since S and P⁻ are symmetric.
    let hp = h * p_minus.matrix();
    let solved = chol.solve(&hp);
    Ok(Matrix3xX::from(solved.transpose()))
}

/// Measurement update in the plain form P⁺ = (I − P⁻ Hᵀ S⁻¹ H) P⁻.
pub fn update_covariance(
    p_minus: &Covariance,
    h: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<Covariance> {
    let k = kalman_gain(p_minus, h, s)?;
    let p = (Matrix3::identity() - k * h) * p_minus.matrix();
    let p_plus = Covariance::new(p);
    debug_assert!(p_plus.trace() <= p_minus.trace() + 1e-12);
    Ok(p_plus)
}

/// Joseph-form update (I−KH) P⁻ (I−KH)ᵀ + ε² K Σ_ν Kᵀ; PSD by construction.
pub fn joseph_update(
    p_minus: &Covariance,
    h: &DMatrix<f64>,
    world: &WorldModel,
) -> Result<Covariance> {
    let s = innovation_covariance(p_minus, h, world)?;
    let k = kalman_gain(p_minus, h, &s)?;
    joseph_update_with_gain(p_minus, h, &k, world)
}

fn joseph_update_with_gain(
    p_minus: &Covariance,
    h: &DMatrix<f64>,
    k: &Matrix3xX,
    world: &WorldModel,
) -> Result<Covariance> {
    let e2 = world.epsilon * world.epsilon;
    let ikh = Matrix3::identity() - k * h;
    let p = ikh * p_minus.matrix() * ikh.transpose() + k * (&world.sigma_nu * e2) * k.transpose();
    Ok(Covariance::new(p))
}

/// Measurement-independent covariance sequence P⁺₀ … P⁺_K along a nominal
/// trajectory, with Jacobians evaluated at the nominal states.
pub fn propagate_nominal_covariances(
    nominal_states: &[State],
    controls: &[Control],
    world: &WorldModel,
) -> Result<Vec<Covariance>> {
    if nominal_states.len() != controls.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} states for {} controls, got {}",
            controls.len() + 1,
            controls.len(),
            nominal_states.len()
        )));
    }
    if world.epsilon == 0.0 {
        // Noiseless limit: P₀ = 0 and stays 0; S would be singular and the
        // update is vacuous.
        return Ok(vec![Covariance::zeros(); nominal_states.len()]);
    }
    let e2 = world.epsilon * world.epsilon;
    let mut covs = Vec::with_capacity(nominal_states.len());
    covs.push(Covariance::new(world.sigma_x0 * e2));
    for (t, u) in controls.iter().enumerate() {
        let (a, _) = dynamics_jacobians(&nominal_states[t], u, world.dt);
        let p_minus = predict_covariance(&covs[t], &a, world);
        let h = measurement_jacobian(&nominal_states[t + 1], world)?;
        let s = innovation_covariance(&p_minus, &h, world)?;
        covs.push(update_covariance(&p_minus, &h, &s)?);
    }
    Ok(covs)
}

/// Kalman time-plus-measurement update around an externally supplied
/// linearization: predicted mean and measurement come from the caller, the
/// covariance algebra is shared with the planner. The innovation's bearing
/// components must already be wrapped.
pub fn kf_correct(
    predicted: &BeliefState,
    h: &DMatrix<f64>,
    innovation: &DVector<f64>,
    world: &WorldModel,
) -> Result<BeliefState> {
    let s = innovation_covariance(&predicted.cov, h, world)?;
    let k = kalman_gain(&predicted.cov, h, &s)?;
    let correction = &k * innovation;
    let mean = State::new(
        predicted.mean.x + correction[0],
        predicted.mean.y + correction[1],
        predicted.mean.theta + correction[2],
    );
    let cov = joseph_update_with_gain(&predicted.cov, h, &k, world)?;
    Ok(BeliefState { mean, cov })
}

/// One EKF step: predict with Jacobians at the current estimate, update with
/// the measurement Jacobian at the predicted estimate.
pub fn ekf_step(
    belief: &BeliefState,
    control: &Control,
    measurement: &DVector<f64>,
    world: &WorldModel,
) -> Result<BeliefState> {
    let (a, _) = dynamics_jacobians(&belief.mean, control, world.dt);
    let predicted = BeliefState {
        mean: step_dynamics(&belief.mean, control, world.dt),
        cov: predict_covariance(&belief.cov, &a, world),
    };
    if world.epsilon == 0.0 {
        // Noiseless limit: the prior is a point mass and the innovation
        // covariance is singular; the correction is vacuous.
        return Ok(predicted);
    }
    let h = measurement_jacobian(&predicted.mean, world)?;
    let z_pred = measure(&predicted.mean, world)?;
    let mut innovation = measurement - z_pred;
    wrap_innovation(&mut innovation);
    kf_correct(&predicted, &h, &innovation, world)
}
