//! Anchorless relative kinematics for networks of mobile nodes.
//!
//! Given time-varying pairwise distances (and optionally accelerometer
//! readings taken in one shared but unknown orientation), the estimators in
//! this crate recover the relative position, velocity and acceleration of
//! every node at `t = 0`, up to one global orthogonal transform.
//!
//! * [`linalg`]: centering, half-vectorization, EDM/Grammian conversion,
//!   classical MDS and orthogonal Procrustes.
//! * [`sim`]: polynomial trajectories and noisy measurement generation.
//! * [`distance`]: the ranges-only estimator.
//! * [`accel`]: the accelerometer-fused estimator.
//! * [`harness`]: frame alignment, RMSE and Monte-Carlo benchmarking.
//! * [`cli`]: the `relkin` command-line front end.

pub mod accel;
pub mod cli;
pub mod distance;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod sim;

pub use accel::{estimate_with_accel, AccelCoefficients};
pub use distance::{estimate_from_distances, GrammianCoefficients};
pub use error::{Error, Result};
pub use estimate::{KinematicEstimate, Method};
pub use linalg::Matrix;
pub use sim::{MeasurementSet, PolynomialTrajectory, SimConfig};
