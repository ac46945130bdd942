use nalgebra::{Rotation3, Vector3};

use super::MotionFlags;
use crate::scalar::{cst, Real};

/// ‖v‖ below this is a stop, m/s.
pub const VELOCITY_THRESHOLD: f64 = 0.01;
/// ‖ω‖ below this is zero angular rate, rad/s.
pub const OMEGA_THRESHOLD: f64 = 0.005;
/// |lateral| or |vertical| body velocity below this, m/s.
pub const LATERAL_UP_THRESHOLD: f64 = 0.1;

/// Ground-truth labeler: small thresholds on true velocity and angular rate,
/// with lateral/vertical velocities taken in the body frame.
pub fn oracle_labels<T: Real>(
    velocity_w: &Vector3<T>,
    omega: &Vector3<T>,
    rotation: &Rotation3<T>,
) -> MotionFlags {
    let body = rotation.inverse() * velocity_w;
    let lat_up = cst::<T>(LATERAL_UP_THRESHOLD);
    MotionFlags {
        vel: velocity_w.norm() < cst(VELOCITY_THRESHOLD),
        ang: omega.norm() < cst(OMEGA_THRESHOLD),
        lat: body.y.abs() < lat_up,
        up: body.z.abs() < lat_up,
    }
}

/// Labels for the step from sample `n` to `n + 1`: a profile holds over
/// the step only if it holds at both ends. The filter propagates with the
/// step's flags and then constrains the state at `n + 1`, so a stop that
/// ends inside the step must not be flagged.
pub fn oracle_step_labels<T: Real>(
    start: (&Vector3<T>, &Rotation3<T>),
    end: (&Vector3<T>, &Rotation3<T>),
    omega: &Vector3<T>,
) -> MotionFlags {
    oracle_labels(start.0, omega, start.1) & oracle_labels(end.0, omega, end.1)
}
