//! Belief-space motion planning toolkit.
//!
//! Optimizes a nominal trajectory for a unicycle robot against Kalman-filter
//! covariance dynamics, synthesizes a time-varying LQR feedback schedule
//! around it, and validates the closed loop with seeded Monte Carlo rollouts.
//!
//! Pipeline: [`config`] loads a scenario, [`planner`] solves for the nominal
//! controls, [`lqr`] builds the gain schedule, [`montecarlo`] executes and
//! aggregates statistics, and [`commands`] ties it together behind the CLI.

pub mod commands;
pub mod config;
pub mod error;
pub mod filters;
pub mod io;
pub mod lqr;
pub mod models;
pub mod montecarlo;
pub mod planner;
pub mod svg;

pub use error::{Error, Result};
pub use models::{Control, Landmark, Obstacle, State, WorldModel};
