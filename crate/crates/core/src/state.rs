//! Navigation state and strapdown propagation.
//!
//! Frames: the world frame is z-up with gravity `(0, 0, −9.81)`; a level
//! IMU at rest therefore reads a specific force of `(0, 0, +9.81)`.

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::lie::{exp_so3, Se23};
use crate::scalar::{cst, Real};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Pose, velocity and IMU biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState<T: Real> {
    /// Body to world.
    pub rotation: Rotation3<T>,
    pub velocity: Vector3<T>,
    pub position: Vector3<T>,
    pub gyro_bias: Vector3<T>,
    pub accel_bias: Vector3<T>,
}

impl<T: Real> Default for NavState<T> {
    fn default() -> Self {
        Self {
            rotation: Rotation3::identity(),
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }
}

impl<T: Real> NavState<T> {
    pub fn pose(&self) -> Se23<T> {
        Se23::new(self.rotation, self.velocity, self.position)
    }

    pub fn with_pose(&self, pose: Se23<T>) -> Self {
        Self {
            rotation: pose.rotation,
            velocity: pose.velocity,
            position: pose.position,
            ..*self
        }
    }

    /// Velocity in the body frame: (forward, lateral, up).
    pub fn body_velocity(&self) -> Vector3<T> {
        self.rotation.inverse() * self.velocity
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && [
                self.velocity,
                self.position,
                self.gyro_bias,
                self.accel_bias,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// One timestamped IMU reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample<T: Real> {
    /// Seconds.
    pub timestamp: T,
    /// rad/s, body frame.
    pub gyro: Vector3<T>,
    /// Specific force, m/s², body frame.
    pub accel: Vector3<T>,
}

impl<T: Real> ImuSample<T> {
    pub fn new(timestamp: T, gyro: Vector3<T>, accel: Vector3<T>) -> Self {
        Self {
            timestamp,
            gyro,
            accel,
        }
    }
}

/// World-frame gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gravity<T: Real> {
    pub g: Vector3<T>,
}

impl<T: Real> Default for Gravity<T> {
    fn default() -> Self {
        Self {
            g: Vector3::new(T::zero(), T::zero(), -cst::<T>(STANDARD_GRAVITY)),
        }
    }
}

impl<T: Real> Gravity<T> {
    /// Accepts magnitudes in [9.7, 9.9] m/s².
    pub fn new(g: Vector3<T>) -> Result<Self> {
        let n = g.norm().to_f64().unwrap_or(f64::NAN);
        if !(9.7..=9.9).contains(&n) {
            return Err(Error::Config(format!(
                "gravity norm {n} outside [9.7, 9.9]"
            )));
        }
        Ok(Self { g })
    }
}

fn check_dt<T: Real>(dt: T) -> Result<()> {
    if dt > T::zero() {
        Ok(())
    } else {
        Err(Error::NonPositiveDt(dt.to_f64().unwrap_or(f64::NAN)))
    }
}

/// One Euler step of the strapdown equations with bias-corrected inputs:
///
/// ```text
/// R⁺ = R exp(ω dt)
/// v⁺ = v + (R a + g) dt
/// p⁺ = p + v dt        (pre-update velocity)
/// ```
///
/// Biases are carried through unchanged.
pub fn propagate_nav<T: Real>(
    state: &NavState<T>,
    omega: &Vector3<T>,
    accel: &Vector3<T>,
    dt: T,
    gravity: &Gravity<T>,
) -> Result<NavState<T>> {
    check_dt(dt)?;
    Ok(NavState {
        rotation: state.rotation * exp_so3(&(omega * dt)),
        velocity: state.velocity + (state.rotation * accel + gravity.g) * dt,
        position: state.position + state.velocity * dt,
        ..*state
    })
}

/// Removes the estimated biases from a raw sample: `(gyro − b_ω, accel − b_a)`.
pub fn correct_measurement<T: Real>(
    sample: &ImuSample<T>,
    state: &NavState<T>,
) -> (Vector3<T>, Vector3<T>) {
    (
        sample.gyro - state.gyro_bias,
        sample.accel - state.accel_bias,
    )
}
