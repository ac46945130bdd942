//! SO(3) and SE₂(3) primitives.
//!
//! An SE₂(3) element packs rotation, velocity and position into the 5×5
//! matrix
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! and its tangent vectors are ordered `(ξᴿ, ξᵛ, ξᵖ)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, Rotation3, SVector, Vector3};

use crate::scalar::{cst, Real};

pub type Tangent9<T> = SVector<T, 9>;

/// Below this rotation angle the exponential coefficients switch to their
/// Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric matrix with `skew(u) * w == u.cross(w)`.
pub fn skew<T: Real>(u: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -u.z, u.y, u.z, z, -u.x, -u.y, u.x, z)
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = cst::<T>(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Coefficients `(sin θ/θ, (1−cos θ)/θ², (θ−sin θ)/θ³)`.
fn exp_coefficients<T: Real>(theta: T) -> (T, T, T) {
    if theta < cst(SMALL_ANGLE) {
        let t2 = theta * theta;
        (
            T::one() - t2 / cst(6.0),
            cst::<T>(0.5) - t2 / cst(24.0),
            cst::<T>(1.0 / 6.0) - t2 / cst(120.0),
        )
    } else {
        let s = theta.sin();
        let half_s = (theta * cst(0.5)).sin();
        let t2 = theta * theta;
        (
            s / theta,
            // 1 − cos θ = 2 sin²(θ/2), free of cancellation
            cst::<T>(2.0) * half_s * half_s / t2,
            (theta - s) / (t2 * theta),
        )
    }
}

/// Rodrigues' formula.
pub fn exp_so3<T: Real>(phi: &Vector3<T>) -> Rotation3<T> {
    let (sinc, a, _) = exp_coefficients(phi.norm());
    let k = skew(phi);
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * sinc + k * k * a)
}

/// Rotation vector of `r`, with `exp_so3(log_so3(r)) == r`.
///
/// The angle comes from `atan2` of the skew and trace parts, which keeps
/// full precision for small rotations where `acos` of the trace does not.
pub fn log_so3<T: Real>(r: &Rotation3<T>) -> Vector3<T> {
    let m = r.matrix();
    let w = vee(&(m - m.transpose())) * cst::<T>(0.5);
    let s = w.norm();
    let c = (m.trace() - T::one()) * cst::<T>(0.5);
    let theta = s.atan2(c);
    if theta < cst(SMALL_ANGLE) {
        w * (T::one() + theta * theta / cst(6.0))
    } else if theta < cst(3.0) {
        w * (theta / s)
    } else {
        r.scaled_axis()
    }
}

/// Left Jacobian of SO(3), `I + a K + b K²`.
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let (_, a, b) = exp_coefficients(phi.norm());
    let k = skew(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Nearest rotation in Frobenius norm.
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Rotation3<T> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if (u * v_t).determinant() < T::zero() {
        let mut col = u.column_mut(2);
        col.neg_mut();
    }
    Rotation3::from_matrix_unchecked(u * v_t)
}

/// ‖RᵀR − I‖_F and |det R − 1|, for invariant checks.
pub fn rotation_defect<T: Real>(m: &Matrix3<T>) -> (T, T) {
    let ortho = (m.transpose() * m - Matrix3::identity()).norm();
    (ortho, (m.determinant() - T::one()).abs())
}

/// Extended pose `(R, v, p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se23<T: Real> {
    pub rotation: Rotation3<T>,
    pub velocity: Vector3<T>,
    pub position: Vector3<T>,
}

impl<T: Real> Se23<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<T>, velocity: Vector3<T>, position: Vector3<T>) -> Self {
        Self {
            rotation,
            velocity,
            position,
        }
    }

    /// Closed-form exponential of a 9-vector `(ξᴿ, ξᵛ, ξᵖ)`.
    ///
    /// The rotation block is exactly [`exp_so3`] of `ξᴿ`; the translational
    /// columns are the SO(3) left Jacobian applied to `ξᵛ` and `ξᵖ`.
    pub fn exp(xi: &Tangent9<T>) -> Self {
        let phi = xi.fixed_rows::<3>(0).into_owned();
        let jac = so3_left_jacobian(&phi);
        Self {
            rotation: exp_so3(&phi),
            velocity: jac * xi.fixed_rows::<3>(3),
            position: jac * xi.fixed_rows::<3>(6),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self {
            rotation: rt,
            velocity: -(rt * self.velocity),
            position: -(rt * self.position),
        }
    }

    pub fn to_matrix(&self) -> Matrix5<T> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m
    }

    /// Reads the upper three rows of `m`; the bottom block is assumed to be
    /// `[0 | I₂]`.
    pub fn from_matrix(m: &Matrix5<T>) -> Self {
        Self {
            rotation: Rotation3::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }
}

impl<T: Real> Mul for Se23<T> {
    type Output = Se23<T>;

    fn mul(self, rhs: Se23<T>) -> Se23<T> {
        Se23 {
            rotation: self.rotation * rhs.rotation,
            velocity: self.rotation * rhs.velocity + self.velocity,
            position: self.rotation * rhs.position + self.position,
        }
    }
}

/// `ξ ↦ ξ^∧ ∈ se₂(3)`.
pub fn hat_se23<T: Real>(xi: &Tangent9<T>) -> Matrix5<T> {
    let mut m = Matrix5::zeros();
    let phi = xi.fixed_rows::<3>(0).into_owned();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&phi));
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&xi.fixed_rows::<3>(3));
    m.fixed_view_mut::<3, 1>(0, 4)
        .copy_from(&xi.fixed_rows::<3>(6));
    m
}

/// `ξ^∧ ↦ ξ`; the rotation part is read from the antisymmetric component.
pub fn vee_se23<T: Real>(m: &Matrix5<T>) -> Tangent9<T> {
    let mut xi = Tangent9::zeros();
    xi.fixed_rows_mut::<3>(0)
        .copy_from(&vee(&m.fixed_view::<3, 3>(0, 0).into_owned()));
    xi.fixed_rows_mut::<3>(3)
        .copy_from(&m.fixed_view::<3, 1>(0, 3));
    xi.fixed_rows_mut::<3>(6)
        .copy_from(&m.fixed_view::<3, 1>(0, 4));
    xi
}
