//! Right-invariant EKF on SE₂(3) × ℝ⁶.
//!
//! The estimate `χ̂ = (R̂, v̂, p̂)` and biases `b̂` relate to the truth by
//!
//! ```text
//! χ = exp(ξ) χ̂,    b = b̂ + e_b,    e = (ξᴿ, ξᵛ, ξᵖ, e_bω, e_ba) ~ N(0, P)
//! ```
//!
//! Propagation follows the strapdown equations, except that a detected
//! zero-velocity profile freezes `(v, p)` and a detected zero-angular-rate
//! profile freezes `R`. The detected profiles then contribute stacked
//! pseudo-measurements in the fixed order `[vel(6), ang(3), lat(1), up(1)]`,
//! with lat/up dropped whenever zero velocity is already asserted.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, SVector, Vector3};

use crate::detectors::MotionFlags;
use crate::error::{Error, Result};
use crate::lie::{exp_so3, orthonormalize, skew, Se23, Tangent9};
use crate::scalar::{cst, Real};
use crate::state::{correct_measurement, propagate_nav, Gravity, ImuSample, NavState};

pub type Matrix15<T> = SMatrix<T, 15, 15>;
pub type Matrix15x12<T> = SMatrix<T, 15, 12>;

/// Row/column offsets of the error blocks.
pub const ROT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const GYRO_BIAS: usize = 9;
pub const ACCEL_BIAS: usize = 12;

/// Column offsets of the process-noise blocks `(w_ω, w_a, w_bω, w_ba)`.
pub const NOISE_GYRO: usize = 0;
pub const NOISE_ACCEL: usize = 3;
pub const NOISE_GYRO_BIAS: usize = 6;
pub const NOISE_ACCEL_BIAS: usize = 9;

/// Rotation re-orthonormalization period, in propagation steps.
pub const REORTHONORMALIZE_EVERY: u64 = 1000;

/// 15×15 covariance of `(ξᴿ, ξᵛ, ξᵖ, e_bω, e_ba)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorCovariance<T: Real>(pub Matrix15<T>);

impl<T: Real> ErrorCovariance<T> {
    pub fn symmetrized(m: Matrix15<T>) -> Self {
        Self((m + m.transpose()) * cst::<T>(0.5))
    }

    pub fn matrix(&self) -> &Matrix15<T> {
        &self.0
    }

    pub fn trace(&self) -> T {
        self.0.trace()
    }

    /// Largest absolute asymmetry and smallest eigenvalue.
    pub fn health(&self) -> (T, T) {
        let asym = (self.0 - self.0.transpose()).amax();
        let sym = (self.0 + self.0.transpose()) * cst::<T>(0.5);
        let min_eig = sym.symmetric_eigenvalues().min();
        (asym, min_eig)
    }

    /// Symmetric to 1e-9 and eigenvalues ≥ −1e-9, relative to the largest
    /// diagonal entry when that exceeds one.
    pub fn is_valid(&self) -> bool {
        let (asym, min_eig) = self.health();
        let scale = self.0.diagonal().amax().max(T::one());
        let tol = cst::<T>(1e-9) * scale;
        asym <= tol && min_eig >= -tol
    }
}

/// Process-noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ProcessNoise<T: Real> {
    /// rad/s
    pub gyro: T,
    /// m/s²
    pub accel: T,
    /// rad/s
    pub gyro_bias: T,
    /// m/s²
    pub accel_bias: T,
}

impl<T: Real> Default for ProcessNoise<T> {
    fn default() -> Self {
        Self {
            gyro: cst(0.01),
            accel: cst(0.2),
            gyro_bias: cst(0.001),
            accel_bias: cst(0.02),
        }
    }
}

impl<T: Real> ProcessNoise<T> {
    pub fn validate(&self) -> Result<()> {
        positive(
            "process noise",
            &[self.gyro, self.accel, self.gyro_bias, self.accel_bias],
        )
    }

    /// `Q = diag(σ_ω² I, σ_a² I, σ_bω² I, σ_ba² I)`.
    pub fn covariance(&self) -> SMatrix<T, 12, 12> {
        let mut d = SVector::<T, 12>::zeros();
        for (block, s) in [self.gyro, self.accel, self.gyro_bias, self.accel_bias]
            .into_iter()
            .enumerate()
        {
            d.fixed_rows_mut::<3>(3 * block).fill(s * s);
        }
        SMatrix::from_diagonal(&d)
    }
}

/// Pseudo-measurement noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MeasurementNoise<T: Real> {
    /// Zero-velocity body velocity rows, m/s.
    pub vel_v: T,
    /// Zero-velocity specific-force rows, m/s².
    pub vel_a: T,
    /// Zero-angular-rate rows, rad/s.
    pub ang: T,
    /// Zero lateral velocity, m/s.
    pub lat: T,
    /// Zero vertical velocity, m/s.
    pub up: T,
}

impl<T: Real> Default for MeasurementNoise<T> {
    fn default() -> Self {
        Self {
            vel_v: cst(1.0),
            vel_a: cst(0.4),
            ang: cst(0.04),
            lat: cst(3.0),
            up: cst(3.0),
        }
    }
}

impl<T: Real> MeasurementNoise<T> {
    pub fn validate(&self) -> Result<()> {
        positive(
            "measurement noise",
            &[self.vel_v, self.vel_a, self.ang, self.lat, self.up],
        )
    }
}

/// Initial standard deviations used by stationary initialization.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InitialCovariance<T: Real> {
    pub roll_pitch: T,
    pub yaw: T,
    pub velocity: T,
    pub position: T,
    pub gyro_bias: T,
    pub accel_bias: T,
}

impl<T: Real> Default for InitialCovariance<T> {
    fn default() -> Self {
        Self {
            roll_pitch: cst(0.03),
            yaw: cst(0.3),
            velocity: cst(0.3),
            position: cst(0.01),
            gyro_bias: cst(0.005),
            accel_bias: cst(0.05),
        }
    }
}

impl<T: Real> InitialCovariance<T> {
    pub fn validate(&self) -> Result<()> {
        positive(
            "initial covariance",
            &[
                self.roll_pitch,
                self.yaw,
                self.velocity,
                self.position,
                self.gyro_bias,
                self.accel_bias,
            ],
        )
    }

    pub fn to_matrix(&self) -> Matrix15<T> {
        let mut d = SVector::<T, 15>::zeros();
        d[0] = self.roll_pitch * self.roll_pitch;
        d[1] = self.roll_pitch * self.roll_pitch;
        d[2] = self.yaw * self.yaw;
        d.fixed_rows_mut::<3>(VEL)
            .fill(self.velocity * self.velocity);
        d.fixed_rows_mut::<3>(POS)
            .fill(self.position * self.position);
        d.fixed_rows_mut::<3>(GYRO_BIAS)
            .fill(self.gyro_bias * self.gyro_bias);
        d.fixed_rows_mut::<3>(ACCEL_BIAS)
            .fill(self.accel_bias * self.accel_bias);
        Matrix15::from_diagonal(&d)
    }
}

fn positive<T: Real>(what: &str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| *v > T::zero() && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what}: all standard deviations must be positive"
        )))
    }
}

/// Estimate plus error covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState<T: Real> {
    pub nav: NavState<T>,
    pub cov: ErrorCovariance<T>,
    pub step_index: u64,
}

impl<T: Real> FilterState<T> {
    pub fn new(nav: NavState<T>, cov: Matrix15<T>) -> Self {
        Self {
            nav,
            cov: ErrorCovariance(cov),
            step_index: 0,
        }
    }

    /// Covariance of the plain position error `p − p̂`.
    ///
    /// To first order `p − p̂ = ξᵖ − p̂× ξᴿ`.
    pub fn position_covariance(&self) -> Matrix3<T> {
        let mut t = SMatrix::<T, 3, 15>::zeros();
        t.fixed_view_mut::<3, 3>(0, ROT)
            .copy_from(&(-skew(&self.nav.position)));
        t.fixed_view_mut::<3, 3>(0, POS)
            .copy_from(&Matrix3::identity());
        t * self.cov.0 * t.transpose()
    }
}

/// Bundled filter parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams<T: Real> {
    pub process: ProcessNoise<T>,
    pub measurement: MeasurementNoise<T>,
    pub gravity: Gravity<T>,
}

impl<T: Real> Default for FilterParams<T> {
    fn default() -> Self {
        Self {
            process: ProcessNoise::default(),
            measurement: MeasurementNoise::default(),
            gravity: Gravity::default(),
        }
    }
}

/// Continuous-time error-dynamics matrix `A`, with `F = I + A dt`.
///
/// With no profile detected this is the standard right-invariant
/// linearization:
///
/// ```text
/// |  0   0  0  −R      0 |
/// | g×   0  0  −v×R   −R |
/// |  0   I  0  −p×R    0 |
/// |  0   0  0   0      0 |
/// |  0   0  0   0      0 |
/// ```
///
/// A frozen attitude (`ang`) removes the rotation rows and every term fed by
/// the gyro bias; frozen velocity/position (`vel`) removes everything in the
/// velocity and position rows except the gyro-bias coupling, which remains
/// because `ξᵛ = v − ΔR v̂` still moves with the attitude error.
pub fn error_dynamics<T: Real>(
    nav: &NavState<T>,
    flags: MotionFlags,
    gravity: &Gravity<T>,
) -> Matrix15<T> {
    let r = *nav.rotation.matrix();
    let mut a = Matrix15::zeros();
    a.fixed_view_mut::<3, 3>(ROT, GYRO_BIAS).copy_from(&(-r));
    a.fixed_view_mut::<3, 3>(VEL, ROT)
        .copy_from(&skew(&gravity.g));
    a.fixed_view_mut::<3, 3>(VEL, GYRO_BIAS)
        .copy_from(&(-skew(&nav.velocity) * r));
    a.fixed_view_mut::<3, 3>(VEL, ACCEL_BIAS).copy_from(&(-r));
    a.fixed_view_mut::<3, 3>(POS, VEL)
        .copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(POS, GYRO_BIAS)
        .copy_from(&(-skew(&nav.position) * r));

    if flags.ang {
        a.fixed_rows_mut::<3>(ROT).fill(T::zero());
        a.fixed_view_mut::<6, 3>(VEL, GYRO_BIAS).fill(T::zero());
    }
    if flags.vel {
        a.fixed_view_mut::<6, 9>(VEL, 0).fill(T::zero());
        a.fixed_view_mut::<6, 3>(VEL, ACCEL_BIAS).fill(T::zero());
    }
    a
}

/// State-transition Jacobian `F = I + A dt`; see [`error_dynamics`].
pub fn jacobian_f<T: Real>(
    nav: &NavState<T>,
    flags: MotionFlags,
    dt: T,
    gravity: &Gravity<T>,
) -> Matrix15<T> {
    Matrix15::identity() + error_dynamics(nav, flags, gravity) * dt
}

/// Noise Jacobian for `(w_ω, w_a, w_bω, w_ba)`:
///
/// ```text
/// | R     0  0  0 |
/// | v×R   R  0  0 |
/// | p×R   0  0  0 |  · dt
/// | 0     0  I  0 |
/// | 0     0  0  I |
/// ```
///
/// with the same flag-dependent zeroing as [`error_dynamics`]. The inertial
/// noises enter additively on the bias-corrected rates.
pub fn jacobian_g<T: Real>(nav: &NavState<T>, flags: MotionFlags, dt: T) -> Matrix15x12<T> {
    let r = *nav.rotation.matrix();
    let mut g = Matrix15x12::zeros();
    g.fixed_view_mut::<3, 3>(ROT, NOISE_GYRO).copy_from(&r);
    g.fixed_view_mut::<3, 3>(VEL, NOISE_GYRO)
        .copy_from(&(skew(&nav.velocity) * r));
    g.fixed_view_mut::<3, 3>(VEL, NOISE_ACCEL).copy_from(&r);
    g.fixed_view_mut::<3, 3>(POS, NOISE_GYRO)
        .copy_from(&(skew(&nav.position) * r));
    g.fixed_view_mut::<3, 3>(GYRO_BIAS, NOISE_GYRO_BIAS)
        .copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(ACCEL_BIAS, NOISE_ACCEL_BIAS)
        .copy_from(&Matrix3::identity());

    if flags.ang {
        g.fixed_rows_mut::<3>(ROT).fill(T::zero());
        g.fixed_view_mut::<6, 3>(VEL, NOISE_GYRO).fill(T::zero());
    }
    if flags.vel {
        g.fixed_view_mut::<6, 9>(VEL, NOISE_ACCEL).fill(T::zero());
    }
    g * dt
}

/// Mean propagation under the detected profiles (biases held).
pub fn propagate_conditioned<T: Real>(
    nav: &NavState<T>,
    sample: &ImuSample<T>,
    flags: MotionFlags,
    gravity: &Gravity<T>,
    dt: T,
) -> Result<NavState<T>> {
    let (omega, accel) = correct_measurement(sample, nav);
    let free = propagate_nav(nav, &omega, &accel, dt, gravity)?;
    Ok(NavState {
        rotation: if flags.ang {
            nav.rotation
        } else {
            free.rotation
        },
        velocity: if flags.vel {
            nav.velocity
        } else {
            free.velocity
        },
        position: if flags.vel {
            nav.position
        } else {
            free.position
        },
        ..free
    })
}

/// Propagation step: conditioned mean dynamics and `P⁺ = F P Fᵀ + G Q Gᵀ`,
/// with `F`, `G` linearized at the pre-propagation estimate.
pub fn propagate<T: Real>(
    fs: &FilterState<T>,
    sample: &ImuSample<T>,
    flags: MotionFlags,
    q: &ProcessNoise<T>,
    gravity: &Gravity<T>,
    dt: T,
) -> Result<FilterState<T>> {
    let mut nav = propagate_conditioned(&fs.nav, sample, flags, gravity, dt)?;
    let f = jacobian_f(&fs.nav, flags, dt, gravity);
    let g = jacobian_g(&fs.nav, flags, dt);
    let cov = f * fs.cov.0 * f.transpose() + g * q.covariance() * g.transpose();

    let step_index = fs.step_index + 1;
    if step_index.is_multiple_of(REORTHONORMALIZE_EVERY) {
        nav.rotation = orthonormalize(nav.rotation.matrix());
    }
    Ok(FilterState {
        nav,
        cov: ErrorCovariance(cov),
        step_index,
    })
}

/// Stacked pseudo-measurement `y ≈ h(x)` with Jacobian `H` w.r.t. the error
/// state and noise covariance `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMeasurement<T: Real> {
    pub y: DVector<T>,
    /// `h(x̂)`.
    pub predicted: DVector<T>,
    pub h: DMatrix<T>,
    pub n: DMatrix<T>,
}

impl<T: Real> PseudoMeasurement<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn innovation(&self) -> DVector<T> {
        &self.y - &self.predicted
    }
}

struct Rows<T: Real> {
    y: Vec<T>,
    predicted: Vec<T>,
    h: Vec<SVector<T, 15>>,
    var: Vec<T>,
}

impl<T: Real> Rows<T> {
    fn push(&mut self, y: T, predicted: T, h: SVector<T, 15>, sigma: T) {
        self.y.push(y);
        self.predicted.push(predicted);
        self.h.push(h);
        self.var.push(sigma * sigma);
    }
}

/// Assembles the pseudo-measurements of the detected profiles.
///
/// - `vel`: `(Rᵀv, b_a − Rᵀg) = (0, a_imu)`
/// - `ang`: `b_ω = ω_imu`
/// - `lat`, `up`: second and third components of `Rᵀv` equal zero; skipped
///   when `vel` is set.
///
/// Jacobians follow from `R = exp(ξᴿ) R̂`, `v = exp(ξᴿ) v̂ + ξᵛ`,
/// `b = b̂ + e_b`: `∂(Rᵀv)/∂ξᵛ = R̂ᵀ`, `∂(b_a − Rᵀg)/∂ξᴿ = −R̂ᵀ g×`,
/// `∂(b_a − Rᵀg)/∂e_ba = I` and `∂b_ω/∂e_bω = I`.
pub fn stack_measurements<T: Real>(
    nav: &NavState<T>,
    flags: MotionFlags,
    sample: &ImuSample<T>,
    noise: &MeasurementNoise<T>,
    gravity: &Gravity<T>,
) -> Result<PseudoMeasurement<T>> {
    if !flags.any() {
        return Err(Error::NoProfileFlagged);
    }
    let rt = nav.rotation.matrix().transpose();
    let body_vel = rt * nav.velocity;
    let mut rows = Rows {
        y: vec![],
        predicted: vec![],
        h: vec![],
        var: vec![],
    };

    let velocity_row = |i: usize| {
        let mut h = SVector::<T, 15>::zeros();
        for j in 0..3 {
            h[VEL + j] = rt[(i, j)];
        }
        h
    };

    if flags.vel {
        for i in 0..3 {
            rows.push(T::zero(), body_vel[i], velocity_row(i), noise.vel_v);
        }
        let predicted = nav.accel_bias - rt * gravity.g;
        let d_rot = -(rt * skew(&gravity.g));
        for i in 0..3 {
            let mut h = SVector::<T, 15>::zeros();
            for j in 0..3 {
                h[ROT + j] = d_rot[(i, j)];
            }
            h[ACCEL_BIAS + i] = T::one();
            rows.push(sample.accel[i], predicted[i], h, noise.vel_a);
        }
    }
    if flags.ang {
        for i in 0..3 {
            let mut h = SVector::<T, 15>::zeros();
            h[GYRO_BIAS + i] = T::one();
            rows.push(sample.gyro[i], nav.gyro_bias[i], h, noise.ang);
        }
    }
    if !flags.vel {
        if flags.lat {
            rows.push(T::zero(), body_vel[1], velocity_row(1), noise.lat);
        }
        if flags.up {
            rows.push(T::zero(), body_vel[2], velocity_row(2), noise.up);
        }
    }

    let m = rows.y.len();
    let mut h = DMatrix::zeros(m, 15);
    for (i, row) in rows.h.iter().enumerate() {
        h.row_mut(i).copy_from(&row.transpose());
    }
    Ok(PseudoMeasurement {
        y: DVector::from_vec(rows.y),
        predicted: DVector::from_vec(rows.predicted),
        h,
        n: DMatrix::from_diagonal(&DVector::from_vec(rows.var)),
    })
}

/// Kalman gain `K = P Hᵀ (H P Hᵀ + N)⁻¹` for arbitrary dimensions.
pub fn kalman_gain<T: Real>(p: &DMatrix<T>, h: &DMatrix<T>, n: &DMatrix<T>) -> Result<DMatrix<T>> {
    if h.ncols() != p.nrows() || n.nrows() != h.nrows() || n.ncols() != h.nrows() {
        return Err(Error::MeasurementShape(format!(
            "P {}x{}, H {}x{}, N {}x{}",
            p.nrows(),
            p.ncols(),
            h.nrows(),
            h.ncols(),
            n.nrows(),
            n.ncols()
        )));
    }
    let ph_t = p * h.transpose();
    let s = h * &ph_t + n;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K Sᵀ = P Hᵀ  ⇔  S Kᵀ = H P  (S and P symmetric)
    Ok(chol.solve(&ph_t.transpose()).transpose())
}

/// Update step: gain, innovation, retraction `χ⁺ = exp(ξ⁺) χ̂`,
/// `b⁺ = b̂ + e_b⁺`, and `P⁺ = (I − K H) P` symmetrized.
pub fn update<T: Real>(fs: &FilterState<T>, meas: &PseudoMeasurement<T>) -> Result<FilterState<T>> {
    if meas.h.nrows() != meas.y.len()
        || meas.predicted.len() != meas.y.len()
        || meas.h.ncols() != 15
    {
        return Err(Error::MeasurementShape(format!(
            "y {}, y_hat {}, H {}x{}",
            meas.y.len(),
            meas.predicted.len(),
            meas.h.nrows(),
            meas.h.ncols()
        )));
    }
    let p = DMatrix::from_column_slice(15, 15, fs.cov.0.as_slice());
    let k = kalman_gain(&p, &meas.h, &meas.n)?;
    let e = &k * meas.innovation();

    let xi = Tangent9::from_iterator(e.rows(0, 9).iter().copied());
    let pose = Se23::exp(&xi) * fs.nav.pose();
    let mut nav = fs.nav.with_pose(pose);
    nav.gyro_bias += Vector3::from_iterator(e.rows(GYRO_BIAS, 3).iter().copied());
    nav.accel_bias += Vector3::from_iterator(e.rows(ACCEL_BIAS, 3).iter().copied());

    let post = (DMatrix::identity(15, 15) - &k * &meas.h) * p;
    let post = Matrix15::from_column_slice(post.as_slice());
    Ok(FilterState {
        nav,
        cov: ErrorCovariance::symmetrized(post),
        step_index: fs.step_index,
    })
}

/// Propagation followed by the update of whatever profiles are flagged.
pub fn step<T: Real>(
    fs: &FilterState<T>,
    sample: &ImuSample<T>,
    flags: MotionFlags,
    params: &FilterParams<T>,
    dt: T,
) -> Result<FilterState<T>> {
    let predicted = propagate(fs, sample, flags, &params.process, &params.gravity, dt)?;
    if !flags.any() {
        return Ok(predicted);
    }
    let meas = stack_measurements(
        &predicted.nav,
        flags,
        sample,
        &params.measurement,
        &params.gravity,
    )?;
    update(&predicted, &meas)
}

pub const MIN_INIT_SAMPLES: usize = 100;
pub const INIT_ACCEL_NORM_RANGE: (f64, f64) = (9.0, 10.5);

/// Self-initialization from a stationary segment.
///
/// Gyro bias is the mean gyro reading; roll and pitch align `Rᵀ(−g)` with the
/// mean specific force; yaw, velocity and position start at zero. The
/// accelerometer bias keeps the part of the mean specific force along the
/// gravity reaction that the attitude cannot explain.
pub fn initialize_stationary<T: Real>(
    samples: &[ImuSample<T>],
    gravity: &Gravity<T>,
    init: &InitialCovariance<T>,
) -> Result<FilterState<T>> {
    if samples.len() < MIN_INIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_INIT_SAMPLES,
            got: samples.len(),
        });
    }
    init.validate()?;
    let n = cst::<T>(samples.len() as f64);
    let mean_gyro = samples.iter().fold(Vector3::zeros(), |acc, s| acc + s.gyro) / n;
    let mean_accel = samples
        .iter()
        .fold(Vector3::zeros(), |acc, s| acc + s.accel)
        / n;

    let norm = mean_accel.norm();
    let (lo, hi) = INIT_ACCEL_NORM_RANGE;
    if !(norm >= cst(lo) && norm <= cst(hi)) {
        return Err(Error::NotStationary {
            norm: norm.to_f64().unwrap_or(f64::NAN),
            lo,
            hi,
        });
    }

    let u = mean_accel / norm;
    let pitch = (-u.x).atan2((u.y * u.y + u.z * u.z).sqrt());
    let roll = u.y.atan2(u.z);
    let level = exp_so3(&(Vector3::y() * pitch)) * exp_so3(&(Vector3::x() * roll));
    let g_norm = gravity.g.norm();
    let up = -gravity.g / g_norm;
    let tilt = Rotation3::rotation_between(&Vector3::z(), &up).unwrap_or_else(Rotation3::identity);
    let rotation = tilt * level;

    let nav = NavState {
        rotation,
        velocity: Vector3::zeros(),
        position: Vector3::zeros(),
        gyro_bias: mean_gyro,
        accel_bias: mean_accel - u * g_norm,
    };
    Ok(FilterState::new(nav, init.to_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_nav(rng: &mut ChaCha8Rng) -> NavState<f64> {
        let mut v = |s: f64| {
            Vector3::new(
                rng.random_range(-s..s),
                rng.random_range(-s..s),
                rng.random_range(-s..s),
            )
        };
        NavState {
            rotation: exp_so3(&v(2.0)),
            velocity: v(10.0),
            position: v(100.0),
            gyro_bias: v(0.01),
            accel_bias: v(0.1),
        }
    }

    fn sample(gyro: Vector3<f64>, accel: Vector3<f64>) -> ImuSample<f64> {
        ImuSample::new(0.0, gyro, accel)
    }

    #[test]
    fn f_is_identity_at_zero_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nav = random_nav(&mut rng);
        assert_eq!(
            jacobian_f(&nav, MotionFlags::NONE, 0.0, &Gravity::default()),
            Matrix15::identity()
        );
    }

    #[test]
    fn f_blocks_at_identity_pose() {
        let g = Gravity::default();
        let nav = NavState::<f64>::default();
        let dt = 0.01;
        let f = jacobian_f(&nav, MotionFlags::NONE, dt, &g);
        let blk = |r: usize, c: usize| f.fixed_view::<3, 3>(r, c).into_owned();
        assert_eq!(blk(VEL, ROT), skew(&g.g) * dt);
        assert_eq!(blk(POS, VEL), Matrix3::identity() * dt);
        assert_eq!(blk(ROT, GYRO_BIAS), -Matrix3::identity() * dt);
        assert_eq!(blk(VEL, ACCEL_BIAS), -Matrix3::identity() * dt);
        assert_eq!(blk(VEL, GYRO_BIAS), Matrix3::zeros());
        assert_eq!(blk(POS, GYRO_BIAS), Matrix3::zeros());
    }

    #[test]
    fn g_blocks_at_identity_pose() {
        let nav = NavState::<f64>::default();
        let dt = 0.01;
        let g = jacobian_g(&nav, MotionFlags::NONE, dt);
        let blk = |r: usize, c: usize| g.fixed_view::<3, 3>(r, c).into_owned();
        let i = Matrix3::identity() * dt;
        assert_eq!(blk(ROT, NOISE_GYRO), i);
        assert_eq!(blk(VEL, NOISE_GYRO), Matrix3::zeros());
        assert_eq!(blk(POS, NOISE_GYRO), Matrix3::zeros());
        assert_eq!(blk(VEL, NOISE_ACCEL), i);
        assert_eq!(blk(GYRO_BIAS, NOISE_GYRO_BIAS), i);
        assert_eq!(blk(ACCEL_BIAS, NOISE_ACCEL_BIAS), i);
    }

    #[test]
    fn zero_velocity_clears_g_rows_when_at_rest() {
        // At a stop (v̂ = 0) at the origin nothing drives ξᵛ, ξᵖ.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nav = NavState {
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
            ..random_nav(&mut rng)
        };
        let flags = MotionFlags::new(true, false, false, false);
        let g = jacobian_g(&nav, flags, 0.01);
        assert!(g.fixed_rows::<6>(VEL).iter().all(|x| *x == 0.0));
        // a full stop freezes the whole pose, wherever it is
        let nav = random_nav(&mut rng);
        let g = jacobian_g(&nav, MotionFlags::new(true, true, false, false), 0.01);
        assert!(g.fixed_rows::<9>(ROT).iter().all(|x| *x == 0.0));
        let f = jacobian_f(
            &nav,
            MotionFlags::new(true, true, false, false),
            0.01,
            &Gravity::default(),
        );
        assert_eq!(
            f.fixed_rows::<9>(ROT).into_owned(),
            Matrix15::<f64>::identity()
                .fixed_rows::<9>(ROT)
                .into_owned()
        );
    }

    #[test]
    fn zero_angular_rate_clears_rotation_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nav = random_nav(&mut rng);
        let flags = MotionFlags::new(false, true, false, false);
        let g = jacobian_g(&nav, flags, 0.01);
        let a = error_dynamics(&nav, flags, &Gravity::default());
        assert!(g.fixed_rows::<3>(ROT).iter().all(|x| *x == 0.0));
        assert!(a.fixed_rows::<3>(ROT).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn navigation_core_is_state_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Gravity::default();
        for flags in [
            MotionFlags::NONE,
            MotionFlags::new(true, false, true, true),
            MotionFlags::new(false, true, false, false),
        ] {
            let a1 = error_dynamics(&random_nav(&mut rng), flags, &g);
            let a2 = error_dynamics(&random_nav(&mut rng), flags, &g);
            assert_eq!(a1.fixed_view::<9, 9>(0, 0), a2.fixed_view::<9, 9>(0, 0));
        }
    }

    #[test]
    fn riccati_fixed_point_without_noise_or_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nav = random_nav(&mut rng);
        let p = InitialCovariance::default().to_matrix();
        let f = jacobian_f(&nav, MotionFlags::NONE, 0.0, &Gravity::default());
        let g = jacobian_g(&nav, MotionFlags::NONE, 0.0);
        let q = ProcessNoise::<f64>::default().covariance();
        assert_eq!(f * p * f.transpose() + g * q * g.transpose(), p);
        assert!(matches!(
            propagate(
                &FilterState::new(nav, p),
                &sample(Vector3::zeros(), Vector3::zeros()),
                MotionFlags::NONE,
                &ProcessNoise::default(),
                &Gravity::default(),
                0.0
            ),
            Err(Error::NonPositiveDt(_))
        ));
    }

    #[test]
    fn full_stop_freezes_navigation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nav = random_nav(&mut rng);
        let fs = FilterState::new(nav, InitialCovariance::default().to_matrix());
        let s = sample(Vector3::new(0.3, -0.2, 0.5), Vector3::new(1.0, 2.0, 3.0));
        let flags = MotionFlags::new(true, true, false, false);
        let next = propagate(
            &fs,
            &s,
            flags,
            &ProcessNoise::default(),
            &Gravity::default(),
            0.01,
        )
        .unwrap();
        assert_eq!(next.nav, nav);
    }

    #[test]
    fn covariance_grows_without_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gn = Normal::new(0.0, 0.01).unwrap();
        let an = Normal::new(0.0, 0.2).unwrap();
        let params = FilterParams::<f64>::default();
        let mut fs = FilterState::new(
            NavState::default(),
            InitialCovariance::default().to_matrix(),
        );
        let mut trace = fs.cov.trace();
        for _ in 0..100 {
            let s = sample(
                Vector3::from_fn(|_, _| gn.sample(&mut rng)),
                Vector3::new(0.0, 0.0, 9.81) + Vector3::from_fn(|_, _| an.sample(&mut rng)),
            );
            fs = propagate(
                &fs,
                &s,
                MotionFlags::NONE,
                &params.process,
                &params.gravity,
                0.01,
            )
            .unwrap();
            assert!(fs.cov.trace() > trace);
            trace = fs.cov.trace();
        }
    }

    #[test]
    fn stacking_shapes_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nav = random_nav(&mut rng);
        let noise = MeasurementNoise::default();
        let g = Gravity::default();
        let s = sample(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.5, -0.1, 9.8));

        let m = stack_measurements(
            &nav,
            MotionFlags::new(true, false, false, false),
            &s,
            &noise,
            &g,
        )
        .unwrap();
        assert_eq!((m.y.len(), m.h.nrows(), m.h.ncols()), (6, 6, 15));
        let expected_n: Vec<f64> = [1.0; 3].into_iter().chain([0.16; 3]).collect();
        assert!((m.n.diagonal() - DVector::from_vec(expected_n)).amax() < 1e-15);
        assert_eq!(
            m.y.rows(3, 3),
            DVector::from_column_slice(s.accel.as_slice())
        );

        let suppressed = stack_measurements(
            &nav,
            MotionFlags::new(true, false, true, true),
            &s,
            &noise,
            &g,
        )
        .unwrap();
        assert_eq!(suppressed, m);

        let m = stack_measurements(
            &nav,
            MotionFlags::new(false, true, true, false),
            &s,
            &noise,
            &g,
        )
        .unwrap();
        assert_eq!(m.y.as_slice(), &[0.1, 0.2, 0.3, 0.0]);
        assert_eq!(m.h[(0, GYRO_BIAS)], 1.0);
        assert!((m.predicted[3] - nav.body_velocity()[1]).abs() < 1e-12);
        assert_eq!(m.n[(3, 3)], 9.0);

        assert!(matches!(
            stack_measurements(&nav, MotionFlags::NONE, &s, &noise, &g),
            Err(Error::NoProfileFlagged)
        ));
    }

    /// H against central differences of the measurement functions.
    #[test]
    fn measurement_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Gravity::default();
        let noise = MeasurementNoise::default();
        let s = sample(Vector3::zeros(), Vector3::zeros());
        let h_of = |nav: &NavState<f64>| -> Vec<f64> {
            let rt = nav.rotation.matrix().transpose();
            let bv = rt * nav.velocity;
            let sf = nav.accel_bias - rt * g.g;
            let mut out = vec![bv.x, bv.y, bv.z, sf.x, sf.y, sf.z];
            out.extend(nav.gyro_bias.iter());
            out
        };
        for _ in 0..20 {
            let nav = random_nav(&mut rng);
            let m = stack_measurements(
                &nav,
                MotionFlags::new(true, true, false, false),
                &s,
                &noise,
                &g,
            )
            .unwrap();
            let eps = 1e-6;
            for j in 0..15 {
                let perturb = |sign: f64| {
                    let mut e = SVector::<f64, 15>::zeros();
                    e[j] = sign * eps;
                    let xi = Tangent9::from_iterator(e.rows(0, 9).iter().copied());
                    let mut n = nav.with_pose(Se23::exp(&xi) * nav.pose());
                    n.gyro_bias += e.fixed_rows::<3>(GYRO_BIAS);
                    n.accel_bias += e.fixed_rows::<3>(ACCEL_BIAS);
                    h_of(&n)
                };
                let (hp, hm) = (perturb(1.0), perturb(-1.0));
                for i in 0..9 {
                    let fd = (hp[i] - hm[i]) / (2.0 * eps);
                    assert!(
                        (fd - m.h[(i, j)]).abs() < 1e-6,
                        "H[{i},{j}] {} vs fd {fd}",
                        m.h[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn scalar_kalman_update() {
        let p = DMatrix::<f64>::from_element(1, 1, 1.0);
        let h = DMatrix::from_element(1, 1, 1.0);
        let n = DMatrix::from_element(1, 1, 1.0);
        let k = kalman_gain(&p, &h, &n).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
        let post = (DMatrix::identity(1, 1) - &k * &h) * &p;
        assert!((post[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_means_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fs = FilterState::new(random_nav(&mut rng), Matrix15::zeros());
        let s = sample(Vector3::new(0.1, 0.0, 0.0), Vector3::new(1.0, 0.0, 9.0));
        let m = stack_measurements(
            &fs.nav,
            MotionFlags::ALL,
            &s,
            &MeasurementNoise::default(),
            &Gravity::default(),
        )
        .unwrap();
        let p = DMatrix::zeros(15, 15);
        assert!(kalman_gain(&p, &m.h, &m.n)
            .unwrap()
            .iter()
            .all(|x| *x == 0.0));
        let next = update(&fs, &m).unwrap();
        assert_eq!(next.nav, fs.nav);
        assert_eq!(next.cov.0, Matrix15::zeros());
    }

    #[test]
    fn zero_innovation_keeps_state_and_shrinks_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fs = FilterState::new(
            random_nav(&mut rng),
            InitialCovariance::default().to_matrix(),
        );
        let s = sample(Vector3::zeros(), Vector3::zeros());
        let mut m = stack_measurements(
            &fs.nav,
            MotionFlags::new(true, true, false, false),
            &s,
            &MeasurementNoise::default(),
            &Gravity::default(),
        )
        .unwrap();
        m.y = m.predicted.clone();
        let next = update(&fs, &m).unwrap();
        assert_eq!(next.nav, fs.nav);
        assert!(next.cov.trace() <= fs.cov.trace());
        assert!(next.cov.is_valid());
    }

    #[test]
    fn update_rejects_bad_shapes_and_singular_innovation() {
        let fs = FilterState::new(NavState::<f64>::default(), Matrix15::zeros());
        let bad = PseudoMeasurement {
            y: DVector::zeros(2),
            predicted: DVector::zeros(2),
            h: DMatrix::zeros(3, 15),
            n: DMatrix::identity(2, 2),
        };
        assert!(matches!(update(&fs, &bad), Err(Error::MeasurementShape(_))));
        let singular = PseudoMeasurement {
            y: DVector::zeros(1),
            predicted: DVector::zeros(1),
            h: DMatrix::zeros(1, 15),
            n: DMatrix::zeros(1, 1),
        };
        assert!(matches!(
            update(&fs, &singular),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn initialization_cases() {
        let g = Gravity::default();
        let init = InitialCovariance::default();
        let level: Vec<_> = (0..100)
            .map(|i| {
                ImuSample::new(
                    i as f64 * 0.01,
                    Vector3::zeros(),
                    Vector3::new(0.0, 0.0, 9.81),
                )
            })
            .collect();
        let fs = initialize_stationary(&level, &g, &init).unwrap();
        assert!((fs.nav.rotation.matrix() - Matrix3::identity()).amax() < 1e-15);
        assert!(fs.nav.gyro_bias.amax() < 1e-15 && fs.nav.accel_bias.amax() < 1e-12);
        assert_eq!(fs.cov.0, init.to_matrix());

        let spinning: Vec<_> = level
            .iter()
            .map(|s| ImuSample {
                gyro: Vector3::new(0.01, 0.0, 0.0),
                ..*s
            })
            .collect();
        let fs = initialize_stationary(&spinning, &g, &init).unwrap();
        assert!((fs.nav.gyro_bias - Vector3::new(0.01, 0.0, 0.0)).amax() < 1e-15);

        assert!(matches!(
            initialize_stationary(&level[..99], &g, &init),
            Err(Error::TooFewSamples { .. })
        ));
        let falling: Vec<_> = level
            .iter()
            .map(|s| ImuSample {
                accel: Vector3::new(0.0, 0.0, 2.0),
                ..*s
            })
            .collect();
        assert!(matches!(
            initialize_stationary(&falling, &g, &init),
            Err(Error::NotStationary { .. })
        ));
    }

    #[test]
    fn initialization_recovers_tilt() {
        let g = Gravity::default();
        let truth = exp_so3(&Vector3::new(0.05, -0.08, 0.0));
        let f = truth.inverse() * (-g.g);
        let samples: Vec<_> = (0..200)
            .map(|i| ImuSample::new(i as f64 * 0.01, Vector3::zeros(), f))
            .collect();
        let fs = initialize_stationary(&samples, &g, &InitialCovariance::default()).unwrap();
        // yaw is set to zero, so compare gravity directions
        assert!((fs.nav.rotation.inverse() * g.g - truth.inverse() * g.g).amax() < 1e-12);
        assert!(fs.nav.accel_bias.amax() < 1e-12);
    }

    #[test]
    fn position_covariance_maps_rotation_error() {
        let nav = NavState {
            position: Vector3::new(100.0, 0.0, 0.0),
            ..NavState::<f64>::default()
        };
        let mut p = Matrix15::zeros();
        p[(2, 2)] = 0.01; // yaw variance
        let fs = FilterState::new(nav, p);
        let pc = fs.position_covariance();
        // 0.1 rad yaw std at 100 m → 10 m std along y
        assert!((pc[(1, 1)] - 100.0).abs() < 1e-9);
        assert_eq!(pc[(0, 0)], 0.0);
    }

    #[test]
    fn runs_in_single_precision() {
        let params = FilterParams::<f32>::default();
        let samples: Vec<_> = (0..100)
            .map(|i| {
                ImuSample::new(
                    i as f32 * 0.01,
                    Vector3::zeros(),
                    Vector3::new(0.0, 0.0, 9.81),
                )
            })
            .collect();
        let mut fs =
            initialize_stationary(&samples, &params.gravity, &InitialCovariance::default())
                .unwrap();
        for s in &samples {
            fs = step(&fs, s, MotionFlags::ALL, &params, 0.01).unwrap();
        }
        assert!(fs.nav.is_finite());
        assert!(fs.nav.position.amax() < 1e-3);
    }
}
