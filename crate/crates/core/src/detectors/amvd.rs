use std::collections::VecDeque;

use nalgebra::Vector3;

use super::{MotionDetector, MotionFlags};
use crate::error::{Error, Result};
use crate::scalar::{cst, Real};
use crate::state::ImuSample;

/// Window length in samples.
pub const AMVD_WINDOW: usize = 100;
/// Variance threshold, m²/s⁴.
pub const AMVD_GAMMA: f64 = 1e-3;

/// Acceleration-moving-variance stationarity test over the last `window`
/// accelerometer samples: stationary iff the mean of the three per-axis
/// unbiased sample variances is below `gamma`.
pub fn amvd_detect<T: Real>(accels: &[Vector3<T>], window: usize, gamma: T) -> Result<bool> {
    if window < 2 || accels.len() < window {
        return Err(Error::WindowTooShort {
            needed: window.max(2),
            got: accels.len(),
        });
    }
    let w = &accels[accels.len() - window..];
    let n = cst::<T>(window as f64);
    let mean = w.iter().fold(Vector3::zeros(), |acc, a| acc + a) / n;
    let sq = w.iter().fold(Vector3::zeros(), |acc: Vector3<T>, a| {
        let d = a - mean;
        acc + d.component_mul(&d)
    });
    let var = sq / (n - T::one());
    Ok(var.sum() / cst(3.0) < gamma)
}

/// Streaming AMVD; only the zero-velocity flag is ever raised. Until the
/// window fills the platform is reported as moving.
#[derive(Clone, Debug)]
pub struct AmvdDetector<T: Real> {
    window: usize,
    gamma: T,
    buf: VecDeque<Vector3<T>>,
}

impl<T: Real> Default for AmvdDetector<T> {
    fn default() -> Self {
        Self::new(AMVD_WINDOW, cst(AMVD_GAMMA))
    }
}

impl<T: Real> AmvdDetector<T> {
    pub fn new(window: usize, gamma: T) -> Self {
        Self {
            window,
            gamma,
            buf: VecDeque::with_capacity(window),
        }
    }
}

impl<T: Real> MotionDetector<T> for AmvdDetector<T> {
    fn detect(&mut self, sample: &ImuSample<T>) -> MotionFlags {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(sample.accel);
        let stationary = self.buf.len() == self.window
            && amvd_detect(self.buf.make_contiguous(), self.window, self.gamma).unwrap_or(false);
        MotionFlags {
            vel: stationary,
            ..MotionFlags::NONE
        }
    }

    fn reset(&mut self) {
        self.buf.clear();
    }
}
