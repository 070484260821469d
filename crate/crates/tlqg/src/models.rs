//! Robot dynamics and landmark measurement models with analytic Jacobians.
//!
//! The vehicle is a discrete-time unicycle with state (x, y, θ) and control
//! (v, ω); the sensor returns range and bearing to every landmark. All
//! functions here are pure and deterministic.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 3;
pub const CONTROL_DIM: usize = 2;

/// Ranges below this are treated as degenerate geometry (robot on a landmark).
pub const MIN_RANGE: f64 = 1e-9;

/// Wrap an angle to the half-open interval (−π, π].
///
/// In-range inputs are returned bit-exactly, so wrapping is idempotent.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI); // [0, 2π)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Robot pose; `theta` is stored wrapped to (−π, π].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Difference `self − other` with the heading component wrapped to its
    /// minimal representative.
    pub fn deviation_from(&self, other: &State) -> Vector3<f64> {
        Vector3::new(
            self.x - other.x,
            self.y - other.y,
            wrap_angle(self.theta - other.theta),
        )
    }
}

/// Commanded linear speed and turn rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub v: f64,
    pub omega: f64,
}

impl Control {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn zero() -> Self {
        Self { v: 0.0, omega: 0.0 }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v, self.omega)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self {
            v: v[0],
            omega: v[1],
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Radially clip the control to the ball ‖u‖ ≤ `radius`.
    pub fn clamp_norm(&self, radius: f64) -> Control {
        let n = self.norm();
        if n > radius {
            let s = radius / n;
            Control::new(self.v * s, self.omega * s)
        } else {
            *self
        }
    }
}

/// A point landmark observed by the range/bearing sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub px: f64,
    pub py: f64,
}

/// Circular obstacle with a safety margin used by the barrier penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub safety_margin: f64,
}

impl Obstacle {
    /// Signed clearance of a point: distance to center minus radius and margin.
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        let d = ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt();
        d - self.radius - self.safety_margin
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) < self.radius * self.radius
    }
}

/// Environment plus noise model: landmarks, obstacles, covariances and the
/// noise scale ε.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub landmarks: Vec<Landmark>,
    pub obstacles: Vec<Obstacle>,
    pub dt: f64,
    pub epsilon: f64,
    pub sigma_omega: Matrix3<f64>,
    pub sigma_nu: DMatrix<f64>,
    pub sigma_x0: Matrix3<f64>,
    /// Diffusion matrix G multiplying the process noise.
    pub diffusion: Matrix3<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

fn check_symmetric(name: &str, m: &DMatrix<f64>, violations: &mut Vec<String>) {
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL {
        violations.push(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        ));
    }
}

impl WorldModel {
    /// Validate and construct a world. Landmarks are sorted by id so that
    /// measurement stacking order is deterministic.
    /// Comparisons are kept in negated form so NaN fails them.
    #[allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(
        mut landmarks: Vec<Landmark>,
        obstacles: Vec<Obstacle>,
        dt: f64,
        epsilon: f64,
        sigma_omega: Matrix3<f64>,
        sigma_nu: DMatrix<f64>,
        sigma_x0: Matrix3<f64>,
        diffusion: Matrix3<f64>,
    ) -> Result<Self> {
        let mut violations = Vec::new();
        if landmarks.is_empty() {
            violations.push("world must have at least one landmark".into());
        }
        landmarks.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in landmarks.windows(2) {
            if pair[0].id == pair[1].id {
                violations.push(format!("duplicate landmark id {:?}", pair[0].id));
            }
        }
        for (i, o) in obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                violations.push(format!("obstacles[{i}].radius must be > 0"));
            }
            if o.safety_margin < 0.0 {
                violations.push(format!("obstacles[{i}].safety_margin must be >= 0"));
            }
        }
        if !(dt > 0.0) {
            violations.push("dt must be > 0".into());
        }
        if !(epsilon >= 0.0) {
            violations.push("epsilon must be >= 0".into());
        }
        let n_z = 2 * landmarks.len();
        if sigma_nu.nrows() != n_z || sigma_nu.ncols() != n_z {
            violations.push(format!(
                "sigma_nu must be {n_z}x{n_z} (2 x landmark count), got {}x{}",
                sigma_nu.nrows(),
                sigma_nu.ncols()
            ));
        }
        check_symmetric(
            "sigma_omega",
            &DMatrix::from_column_slice(3, 3, sigma_omega.as_slice()),
            &mut violations,
        );
        check_symmetric("sigma_nu", &sigma_nu, &mut violations);
        check_symmetric(
            "sigma_x0",
            &DMatrix::from_column_slice(3, 3, sigma_x0.as_slice()),
            &mut violations,
        );
        if sigma_nu.nrows() == sigma_nu.ncols() && sigma_nu.clone().cholesky().is_none() {
            violations.push("sigma_nu must be positive definite".into());
        }
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        Ok(Self {
            landmarks,
            obstacles,
            dt,
            epsilon,
            sigma_omega,
            sigma_nu,
            sigma_x0,
            diffusion,
        })
    }

    pub fn measurement_dim(&self) -> usize {
        2 * self.landmarks.len()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> WorldModel {
        let mut w = self.clone();
        w.epsilon = epsilon;
        w
    }
}

/// One step of the discrete unicycle:
/// (x + dt·v·cosθ, y + dt·v·sinθ, wrap(θ + dt·ω)).
pub fn step_dynamics(state: &State, control: &Control, dt: f64) -> State {
    State::new(
        state.x + dt * control.v * state.theta.cos(),
        state.y + dt * control.v * state.theta.sin(),
        state.theta + dt * control.omega,
    )
}

/// Jacobians A = ∂f/∂x and B = ∂f/∂u of `step_dynamics` at (state, control).
pub fn dynamics_jacobians(
    state: &State,
    control: &Control,
    dt: f64,
) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (s, c) = state.theta.sin_cos();
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dt * control.v * s,
        0.0, 1.0,  dt * control.v * c,
        0.0, 0.0,  1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        dt * c, 0.0,
        dt * s, 0.0,
        0.0,    dt,
    );
    (a, b)
}

/// Stacked range/bearing measurement [r₁, b₁, r₂, b₂, …] over landmarks in id
/// order. Errors if the robot sits on a landmark.
pub fn measure(state: &State, world: &WorldModel) -> Result<DVector<f64>> {
    let mut z = DVector::zeros(world.measurement_dim());
    for (j, lm) in world.landmarks.iter().enumerate() {
        let dx = lm.px - state.x;
        let dy = lm.py - state.y;
        let r = (dx * dx + dy * dy).sqrt();
        if r < MIN_RANGE {
            return Err(Error::DegenerateGeometry {
                landmark: lm.id.clone(),
                range: r,
            });
        }
        z[2 * j] = r;
        z[2 * j + 1] = wrap_angle(dy.atan2(dx) - state.theta);
    }
    Ok(z)
}

/// Jacobian H = ∂h/∂x of `measure`: per landmark the range row is
/// [−Δx/r, −Δy/r, 0] and the bearing row is [Δy/r², −Δx/r², −1].
pub fn measurement_jacobian(state: &State, world: &WorldModel) -> Result<DMatrix<f64>> {
    let mut h = DMatrix::zeros(world.measurement_dim(), STATE_DIM);
    for (j, lm) in world.landmarks.iter().enumerate() {
        let dx = lm.px - state.x;
        let dy = lm.py - state.y;
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        if r < MIN_RANGE {
            return Err(Error::DegenerateGeometry {
                landmark: lm.id.clone(),
                range: r,
            });
        }
        h[(2 * j, 0)] = -dx / r;
        h[(2 * j, 1)] = -dy / r;
        h[(2 * j + 1, 0)] = dy / r2;
        h[(2 * j + 1, 1)] = -dx / r2;
        h[(2 * j + 1, 2)] = -1.0;
    }
    Ok(h)
}

/// Wrap the bearing components (odd indices) of a stacked innovation vector.
pub fn wrap_innovation(innovation: &mut DVector<f64>) {
    for j in (1..innovation.len()).step_by(2) {
        innovation[j] = wrap_angle(innovation[j]);
    }
}
