//! Inertial dead reckoning for wheeled vehicles.
//!
//! The crate bundles the pieces needed to run an IMU-only navigation
//! pipeline on a car-like platform:
//!
//! - [`lie`]: SO(3) / SE₂(3) exponentials used for state retraction.
//! - [`state`]: navigation state and Euler strapdown propagation.
//! - [`iekf`]: right-invariant EKF with motion-profile pseudo-measurements
//!   (zero velocity, zero angular rate, zero lateral and vertical velocity).
//! - [`detectors`]: motion-profile detectors (ground-truth labeler, AMVD,
//!   and an LSTM inference engine over externally trained weights).
//! - [`simulator`]: synthetic vehicle trajectories and IMU corruption.
//! - [`evaluation`]: m-ATE, aligned m-ATE and final distance metrics.
//! - [`io`] and [`pipeline`]: CSV formats, run configuration and the
//!   end-to-end driver used by the CLI.
//!
//! All numerics are generic over [`Real`] (implemented for `f32` and
//! `f64`); the `*64` aliases at the crate root fix the scalar to `f64`,
//! which is what the pipeline and CLI use.

pub mod detectors;
pub mod evaluation;
pub mod iekf;
pub mod io;
pub mod lie;
pub mod pipeline;
pub mod simulator;
pub mod state;

mod error;
mod scalar;

pub use error::{Error, Result};
pub use scalar::{cst, Real};

pub use detectors::{MotionFlags, ProfileScores};
pub use iekf::{FilterState, InitialCovariance, MeasurementNoise, ProcessNoise};
pub use lie::Se23;
pub use state::{Gravity, ImuSample, NavState};

pub type NavState64 = state::NavState<f64>;
pub type ImuSample64 = state::ImuSample<f64>;
pub type Gravity64 = state::Gravity<f64>;
pub type Se23_64 = lie::Se23<f64>;
pub type FilterState64 = iekf::FilterState<f64>;
pub type ProcessNoise64 = iekf::ProcessNoise<f64>;
pub type MeasurementNoise64 = iekf::MeasurementNoise<f64>;
pub type InitialCovariance64 = iekf::InitialCovariance<f64>;
pub use evaluation::TrajectoryRecord;
pub use simulator::GroundTruthSample;

pub type NavState32 = state::NavState<f32>;
pub type ImuSample32 = state::ImuSample<f32>;
pub type FilterState32 = iekf::FilterState<f32>;
