//! Motion-profile detection.
//!
//! Every detector maps the raw IMU stream (and nothing from the filter) to
//! a [`MotionFlags`] per sample.

mod amvd;
mod metrics;
mod network;
mod oracle;

pub use amvd::{amvd_detect, AmvdDetector, AMVD_GAMMA, AMVD_WINDOW};
pub use metrics::{evaluate_detector, DetectorReport, ProfileConfusion};
pub use network::{
    detect_step, threshold_scores, Activation, DenseLayer, DetectorHiddenState, DetectorWeights,
    LstmLayer, NetworkDetector, ProfileNetwork, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub use oracle::{
    oracle_labels, oracle_step_labels, LATERAL_UP_THRESHOLD, OMEGA_THRESHOLD, VELOCITY_THRESHOLD,
};

use crate::scalar::Real;
use crate::state::ImuSample;

/// The four motion hypotheses: zero velocity, zero angular velocity, zero
/// lateral velocity, zero vertical velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MotionFlags {
    pub vel: bool,
    pub ang: bool,
    pub lat: bool,
    pub up: bool,
}

impl MotionFlags {
    pub const NONE: MotionFlags = MotionFlags {
        vel: false,
        ang: false,
        lat: false,
        up: false,
    };
    pub const ALL: MotionFlags = MotionFlags {
        vel: true,
        ang: true,
        lat: true,
        up: true,
    };

    pub fn new(vel: bool, ang: bool, lat: bool, up: bool) -> Self {
        Self { vel, ang, lat, up }
    }

    pub fn any(&self) -> bool {
        self.vel || self.ang || self.lat || self.up
    }

    pub fn as_array(&self) -> [bool; 4] {
        [self.vel, self.ang, self.lat, self.up]
    }

    pub fn from_array(a: [bool; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Clears the lateral and vertical hypotheses.
    pub fn without_lateral_vertical(self) -> Self {
        Self {
            lat: false,
            up: false,
            ..self
        }
    }
}

impl std::ops::BitAnd for MotionFlags {
    type Output = MotionFlags;

    fn bitand(self, rhs: Self) -> Self {
        Self::new(
            self.vel && rhs.vel,
            self.ang && rhs.ang,
            self.lat && rhs.lat,
            self.up && rhs.up,
        )
    }
}

/// Per-profile probabilities in [0, 1], same order as [`MotionFlags`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProfileScores(pub [f64; 4]);

/// Streaming detector over raw IMU samples.
pub trait MotionDetector<T: Real> {
    fn detect(&mut self, sample: &ImuSample<T>) -> MotionFlags;

    fn reset(&mut self);

    /// Runs the detector over a whole sequence from a fresh state.
    fn detect_all(&mut self, samples: &[ImuSample<T>]) -> Vec<MotionFlags> {
        self.reset();
        samples.iter().map(|s| self.detect(s)).collect()
    }
}
