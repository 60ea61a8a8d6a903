//! Two-stage imitation → group-relative RL laboratory for tokenized driving
//! trajectories on a synthetic 2D world.

pub mod adas;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fte;
pub mod grpo;
pub mod io;
pub mod policy;
pub mod scalar;
pub mod scoring;
pub mod traj;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision trajectory used throughout the world, policy and trainers.
pub type Trajectory = traj::Trajectory<f64>;
pub type Waypoint = traj::Waypoint<f64>;
pub type StepStats = traj::StepStats<f64>;
pub type NormalizedTrajectory = traj::NormalizedTrajectory<f64>;

pub type TrajectoryF32 = traj::Trajectory<f32>;
pub type StepStatsF32 = traj::StepStats<f32>;
