//! Exponential maps against matrix series, and filter Jacobians against
//! finite differences of the error dynamics.

use std::f64::consts::PI;
use std::time::Duration;

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wheel_ins::iekf::{jacobian_f, jacobian_g, Matrix15, Matrix15x12};
use wheel_ins::lie::{exp_so3, hat_se23, skew, vee_se23, Se23, Tangent9, SMALL_ANGLE};
use wheel_ins::{Gravity, ImuSample, MotionFlags, NavState};

use crate::Outcome;

const SERIES_TERMS: usize = 30;

/// `Σ_{k<30} Xᵏ / k!`.
pub fn series_exp5(x: &Matrix5<f64>) -> Matrix5<f64> {
    let mut term = Matrix5::identity();
    let mut sum = term;
    for k in 1..SERIES_TERMS {
        term = term * x / k as f64;
        sum += term;
    }
    sum
}

pub fn series_exp3(x: &Matrix3<f64>) -> Matrix3<f64> {
    let mut term = Matrix3::identity();
    let mut sum = term;
    for k in 1..SERIES_TERMS {
        term = term * x / k as f64;
        sum += term;
    }
    sum
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if let Some(u) = v.try_normalize(1e-6) {
            return u;
        }
    }
}

fn random_tangent(rng: &mut ChaCha8Rng, angle: f64) -> Tangent9<f64> {
    let phi = unit_vector(rng) * angle;
    let mut xi = Tangent9::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&phi);
    for i in 3..9 {
        xi[i] = rng.random_range(-10.0..10.0);
    }
    xi
}

/// Closed-form SO(3) and SE₂(3) exponentials against 30-term series on 1000
/// random tangent vectors, plus continuity of the small-angle branch.
pub fn exponential_oracle() -> Outcome {
    Outcome::measure(
        "Lie-algebra oracle equivalence",
        Duration::from_secs(5),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let angle = rng.random_range(0.0..PI);
                let xi = random_tangent(&mut rng, angle);
                let closed = Se23::exp(&xi).to_matrix();
                worst = worst.max((closed - series_exp5(&hat_se23(&xi))).amax());
                let phi: Vector3<f64> = xi.fixed_rows::<3>(0).into();
                let r = exp_so3(&phi);
                worst = worst.max((r.matrix() - series_exp3(&skew(&phi))).amax());
            }

            // At ‖ξᴿ‖ = 1e-8 the closed form must agree with I + X + X²/2.
            let mut small = 0.0f64;
            let mut finite = true;
            for _ in 0..100 {
                let xi = random_tangent(&mut rng, 1e-8);
                let x = hat_se23(&xi);
                let taylor = Matrix5::identity() + x + x * x / 2.0;
                let closed = Se23::exp(&xi).to_matrix();
                finite &= closed.iter().all(|v| v.is_finite());
                small = small.max((closed - taylor).amax() / xi.norm().max(1.0));
                let phi: Vector3<f64> = xi.fixed_rows::<3>(0).into();
                let k = skew(&phi);
                let taylor3 = Matrix3::identity() + k + k * k / 2.0;
                small = small.max((exp_so3(&phi).matrix() - taylor3).amax());
            }
            let zero = Se23::<f64>::exp(&Tangent9::zeros()).to_matrix();
            finite &= zero == Matrix5::identity();

            // Both sides of the branch switch against the series.
            let mut seam = 0.0f64;
            for factor in [1.0 - 1e-9, 1.0, 1.0 + 1e-9] {
                let xi = random_tangent(&mut rng, SMALL_ANGLE * factor);
                let closed = Se23::exp(&xi).to_matrix();
                seam = seam.max((closed - series_exp5(&hat_se23(&xi))).amax());
            }

            let ok = worst < 1e-10 && small < 1e-12 && seam < 1e-12 && finite;
            (
                ok,
                format!(
                    "max series deviation {worst:.1e} (limit 1e-10); \
                     small-angle deviation {small:.1e}, branch seam {seam:.1e} (limit 1e-12)"
                ),
            )
        },
    )
}

/// Time derivative of the 5×5 state and of the biases under the
/// flag-conditioned dynamics, with additive noises
/// `(w_ω, w_a, w_bω, w_ba)` on the bias-corrected rates.
fn state_rates(
    nav: &NavState<f64>,
    sample: &ImuSample<f64>,
    flags: MotionFlags,
    gravity: &Gravity<f64>,
    w: &SVector<f64, 12>,
) -> (Matrix5<f64>, SVector<f64, 6>) {
    let omega = sample.gyro - nav.gyro_bias + w.fixed_rows::<3>(0);
    let accel = sample.accel - nav.accel_bias + w.fixed_rows::<3>(3);
    let r = *nav.rotation.matrix();
    let mut m = Matrix5::zeros();
    if !flags.ang {
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(r * skew(&omega)));
    }
    if !flags.vel {
        m.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(r * accel + gravity.g));
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&nav.velocity);
    }
    let mut bias = SVector::<f64, 6>::zeros();
    bias.copy_from(&w.fixed_rows::<6>(6));
    (m, bias)
}

/// Rate of the right-invariant error `η = χ χ̂⁻¹` in tangent coordinates,
/// `vee(η̇ η⁻¹)`, stacked with the bias-error rates.
fn error_rate(
    truth: &NavState<f64>,
    estimate: &NavState<f64>,
    sample: &ImuSample<f64>,
    flags: MotionFlags,
    gravity: &Gravity<f64>,
    w: &SVector<f64, 12>,
) -> SVector<f64, 15> {
    let x = truth.pose().to_matrix();
    let xh = estimate.pose().to_matrix();
    let xh_inv = estimate.pose().inverse().to_matrix();
    let (dx, db) = state_rates(truth, sample, flags, gravity, w);
    let (dxh, dbh) = state_rates(estimate, sample, flags, gravity, &SVector::zeros());
    let eta = x * xh_inv;
    let deta = dx * xh_inv - eta * dxh * xh_inv;
    let eta_inv = truth.pose().inverse().to_matrix() * xh;
    let xi = vee_se23(&(deta * eta_inv));
    let mut out = SVector::<f64, 15>::zeros();
    out.fixed_rows_mut::<9>(0).copy_from(&xi);
    out.fixed_rows_mut::<6>(9).copy_from(&(db - dbh));
    out
}

fn perturbed(estimate: &NavState<f64>, e: &SVector<f64, 15>) -> NavState<f64> {
    let xi = Tangent9::from_iterator(e.fixed_rows::<9>(0).iter().copied());
    let mut s = estimate.with_pose(Se23::exp(&xi) * estimate.pose());
    s.gyro_bias += e.fixed_rows::<3>(9);
    s.accel_bias += e.fixed_rows::<3>(12);
    s
}

/// Central differences of the error rate with respect to the state error.
pub fn numeric_a(
    estimate: &NavState<f64>,
    sample: &ImuSample<f64>,
    flags: MotionFlags,
    gravity: &Gravity<f64>,
    h: f64,
) -> Matrix15<f64> {
    let w = SVector::zeros();
    let mut a = Matrix15::zeros();
    for j in 0..15 {
        let e = SVector::<f64, 15>::from_fn(|i, _| if i == j { h } else { 0.0 });
        let plus = error_rate(
            &perturbed(estimate, &e),
            estimate,
            sample,
            flags,
            gravity,
            &w,
        );
        let minus = error_rate(
            &perturbed(estimate, &-e),
            estimate,
            sample,
            flags,
            gravity,
            &w,
        );
        a.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    a
}

/// Central differences of the error rate with respect to the noises.
pub fn numeric_g(
    estimate: &NavState<f64>,
    sample: &ImuSample<f64>,
    flags: MotionFlags,
    gravity: &Gravity<f64>,
    h: f64,
) -> Matrix15x12<f64> {
    let mut g = Matrix15x12::zeros();
    for k in 0..12 {
        let w = SVector::<f64, 12>::from_fn(|i, _| if i == k { h } else { 0.0 });
        let plus = error_rate(estimate, estimate, sample, flags, gravity, &w);
        let minus = error_rate(estimate, estimate, sample, flags, gravity, &-w);
        g.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    g
}

fn relative<const R: usize, const C: usize>(
    got: &SMatrix<f64, R, C>,
    want: &SMatrix<f64, R, C>,
) -> f64 {
    (got - want).norm() / want.norm().max(1.0)
}

/// `F` and `G` against central differences over 100 random states and the
/// four combinations of the zero-velocity and zero-rate flags.
pub fn jacobian_finite_differences() -> Outcome {
    Outcome::measure(
        "Jacobian finite-difference suite",
        Duration::from_secs(30),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let gravity = Gravity::default();
            let dt = 0.01;
            let h = 1e-6;
            let mut worst_f = 0.0f64;
            let mut worst_g = 0.0f64;
            let mut cases = 0;
            for _ in 0..100 {
                let angle = rng.random_range(0.0..PI);
                let est = NavState {
                    rotation: exp_so3(&(unit_vector(&mut rng) * angle)),
                    velocity: Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0)),
                    position: Vector3::from_fn(|_, _| rng.random_range(-200.0..200.0)),
                    gyro_bias: Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
                    accel_bias: Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
                };
                let sample = ImuSample::new(
                    0.0,
                    Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0))
                        + Vector3::new(0.0, 0.0, 9.81),
                );
                for (vel, ang) in [(false, false), (true, false), (false, true), (true, true)] {
                    let flags = MotionFlags::new(vel, ang, false, false);
                    let a_fd = numeric_a(&est, &sample, flags, &gravity, h);
                    let f = jacobian_f(&est, flags, dt, &gravity);
                    let f_fd = Matrix15::identity() + a_fd * dt;
                    worst_f = worst_f
                        .max(relative(&((f - Matrix15::identity()) / dt), &a_fd))
                        .max(relative(&f, &f_fd));

                    let g_fd = numeric_g(&est, &sample, flags, &gravity, h);
                    let g = jacobian_g(&est, flags, dt);
                    worst_g = worst_g.max(relative(&(g / dt), &g_fd));
                    cases += 1;
                }
            }
            let ok = worst_f < 1e-5 && worst_g < 1e-5;
            (
                ok,
                format!(
                    "{cases} state/flag cases; max relative deviation F {worst_f:.1e}, \
                     G {worst_g:.1e} (limit 1e-5)"
                ),
            )
        },
    )
}
