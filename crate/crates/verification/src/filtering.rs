//! Closed-loop filter experiments on simulated drives.

use std::f64::consts::PI;
use std::time::Duration;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wheel_ins::evaluation::{final_distance, TrajectoryRecord};
use wheel_ins::iekf::{FilterParams, POS};
use wheel_ins::lie::{log_so3, so3_left_jacobian, Se23, Tangent9};
use wheel_ins::pipeline::{dead_reckon, initialize, place_at, run_filter, FilterRun};
use wheel_ins::simulator::{
    corrupt, generate_truth, GroundTruthSample, ImuCorruption, Segment, TrajectorySpec,
};
use wheel_ins::{FilterState, Gravity, InitialCovariance, MotionFlags, NavState};

use crate::Outcome;

/// Injected on every axis.
pub const GYRO_BIAS: f64 = 0.005;
pub const ACCEL_BIAS: f64 = 0.05;

/// Lower and upper 2.5% quantiles of χ²(3).
pub const CHI2_3_LOWER: f64 = 0.2158;
pub const CHI2_3_UPPER: f64 = 9.348;

fn true_nav(s: &GroundTruthSample) -> NavState<f64> {
    NavState {
        rotation: s.rotation,
        velocity: s.velocity_w,
        position: s.position_w,
        ..NavState::default()
    }
}

fn biased_noise(seed: u64) -> ImuCorruption {
    ImuCorruption {
        gyro_bias: [GYRO_BIAS; 3],
        accel_bias: [ACCEL_BIAS; 3],
        ..ImuCorruption::nominal(seed)
    }
}

fn truth_flags(truth: &[GroundTruthSample]) -> Vec<MotionFlags> {
    truth.iter().map(|s| s.flags).collect()
}

fn nav_record(truth: &[GroundTruthSample], states: &[NavState<f64>]) -> TrajectoryRecord {
    let run = FilterRun {
        timestamps: truth.iter().map(|s| s.timestamp).collect(),
        states: states
            .iter()
            .map(|n| FilterState::new(*n, Default::default()))
            .collect(),
    };
    run.record().expect("increasing timestamps")
}

/// Pure propagation of exact simulator inputs over the 60 s mixed scenario.
pub fn zero_noise_closure() -> Outcome {
    Outcome::measure("Zero-noise closure", Duration::from_secs(5), || {
        let spec = TrajectorySpec::mixed_60s();
        let truth = generate_truth(&spec).expect("valid scenario");
        let imu: Vec<_> = truth.iter().map(|s| s.imu()).collect();
        let states =
            dead_reckon(&imu, &true_nav(&truth[0]), &Gravity::default()).expect("positive dt");
        let worst = states
            .iter()
            .zip(&truth)
            .map(|(s, t)| (s.position - t.position_w).norm())
            .fold(0.0, f64::max);
        let last = (states.last().unwrap().position - truth.last().unwrap().position_w).norm();
        (
            last < 1e-3,
            format!(
                "{:.0} s, {} samples; final position error {last:.1e} m, \
                 worst {worst:.1e} m (limit 1e-3)",
                spec.duration(),
                truth.len()
            ),
        )
    })
}

/// A minute at rest with constant biases; the filter starts from zero bias
/// estimates so any recovery is due to the zero-velocity and zero-rate
/// updates.
pub fn zupt_bias_recovery() -> Outcome {
    Outcome::measure("ZUPT bias recovery", Duration::from_secs(10), || {
        let spec = TrajectorySpec::new(vec![Segment::Stop { duration: 60.0 }]);
        let truth = generate_truth(&spec).expect("valid scenario");
        let imu = corrupt(&truth, &biased_noise(3)).expect("valid corruption");
        let flags = truth_flags(&truth);
        let initial = FilterState::new(
            true_nav(&truth[0]),
            InitialCovariance::default().to_matrix(),
        );
        let run = run_filter(&imu, &flags, &FilterParams::default(), initial).expect("filter run");
        let end = run.states.last().unwrap().nav;
        let injected = Vector3::repeat(GYRO_BIAS);
        let bias_error = (end.gyro_bias - injected).norm() / injected.norm();
        let drift = (end.position - truth.last().unwrap().position_w).norm();
        (
            bias_error < 0.1 && drift < 0.1,
            format!(
                "gyro-bias error {:.1}% of injected norm (limit 10%); \
                 position drift {drift:.1e} m (limit 0.1)",
                100.0 * bias_error
            ),
        )
    })
}

/// Final distances of the full filter, the filter without lateral/vertical
/// updates, and pure integration on a seven-minute drive without stops.
pub fn ablation_distances(seed: u64) -> (f64, f64, f64) {
    let init_stop = 2.0;
    let spec = TrajectorySpec::random_drive(420.0 + init_stop, init_stop, false, seed);
    let truth = generate_truth(&spec).expect("valid scenario");
    let imu = corrupt(&truth, &biased_noise(seed)).expect("valid corruption");
    let gt = TrajectoryRecord::from_truth(&truth).expect("increasing timestamps");
    let params = FilterParams::default();
    let mut initial = initialize(
        &imu,
        init_stop,
        &params.gravity,
        &InitialCovariance::default(),
    )
    .expect("stationary start");
    place_at(&mut initial, &gt.points()[0]);

    let full_flags = truth_flags(&truth);
    let reduced: Vec<MotionFlags> = full_flags
        .iter()
        .map(|f| f.without_lateral_vertical())
        .collect();
    let distance = |flags: &[MotionFlags]| {
        let run = run_filter(&imu, flags, &params, initial).expect("filter run");
        final_distance(&run.record().expect("record"), &gt).expect("overlap")
    };
    let full = distance(&full_flags);
    let no_lat_up = distance(&reduced);
    let dr = dead_reckon(&imu, &initial.nav, &params.gravity).expect("positive dt");
    let imu_only = final_distance(&nav_record(&truth, &dr), &gt).expect("overlap");
    (full, no_lat_up, imu_only)
}

pub fn motion_constraint_ablation() -> Outcome {
    Outcome::measure(
        "Motion-constraint ablation",
        Duration::from_secs(60),
        || {
            let (full, no_lat_up, imu_only) = ablation_distances(5);
            let r1 = no_lat_up / full;
            let r2 = imu_only / full;
            (
                r1 >= 5.0 && r2 >= 10.0,
                format!(
                    "final distance full {full:.1} m, without lateral/vertical {no_lat_up:.1} m \
                     ({r1:.1}x, need 5x), pure integration {imu_only:.1} m ({r2:.1}x, need 10x)"
                ),
            )
        },
    )
}

/// Position NEES of one step, in two forms.
#[derive(Clone, Copy, Debug)]
pub struct Nees {
    /// Position block of the invariant error `log(χ χ̂⁻¹)` against the
    /// position block of `P`.
    pub invariant: f64,
    /// Plain error `p − p̂` against its first-order covariance.
    pub plain: f64,
}

/// Position part of `log(χ χ̂⁻¹)`: `J_l(ξᴿ)⁻¹ (p − ΔR p̂)`.
pub fn invariant_position_error(
    truth: &GroundTruthSample,
    estimate: &NavState<f64>,
) -> Vector3<f64> {
    let dr = truth.rotation * estimate.rotation.inverse();
    let jl = so3_left_jacobian(&log_so3(&dr));
    let jl_inv = jl.try_inverse().expect("rotation error below pi");
    jl_inv * (truth.position_w - dr * estimate.position)
}

fn mahalanobis(e: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
    let inv = cov
        .try_inverse()
        .expect("positive definite position covariance");
    (e.transpose() * inv * e)[0]
}

/// Position NEES for every step of one Monte-Carlo run. The initial error
/// and the true biases are drawn from the filter's prior, and the IMU
/// noise matches its process noise.
pub fn nees_run(seed: u64) -> Vec<Nees> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = TrajectorySpec::random_drive(60.0, 2.0, true, seed);
    spec.initial_yaw = rng.random_range(-PI..PI);
    let mut gauss = |s: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        s * z
    };
    let p0 = InitialCovariance::default();
    let truth = generate_truth(&spec).expect("valid scenario");

    let corruption = ImuCorruption {
        gyro_bias: [0; 3].map(|_| gauss(p0.gyro_bias)),
        accel_bias: [0; 3].map(|_| gauss(p0.accel_bias)),
        bias_walk: true,
        ..ImuCorruption::nominal(seed)
    };
    let imu = corrupt(&truth, &corruption).expect("valid corruption");

    let p0m = p0.to_matrix();
    let xi = Tangent9::from_fn(|i, _| gauss(p0m[(i, i)].sqrt()));
    let start = true_nav(&truth[0]);
    let estimate = start.with_pose(Se23::exp(&-xi) * start.pose());
    let run = run_filter(
        &imu,
        &truth_flags(&truth),
        &FilterParams::default(),
        FilterState::new(estimate, p0m),
    )
    .expect("filter run");

    run.states
        .iter()
        .zip(&truth)
        .skip(1)
        .map(|(fs, t)| {
            let pos_block = fs.cov.0.fixed_view::<3, 3>(POS, POS).into_owned();
            Nees {
                invariant: mahalanobis(&invariant_position_error(t, &fs.nav), &pos_block),
                plain: mahalanobis(&(t.position_w - fs.nav.position), &fs.position_covariance()),
            }
        })
        .collect()
}

pub fn filter_consistency() -> Outcome {
    Outcome::measure("Filter consistency", Duration::from_secs(300), || {
        let runs = 50;
        let envelope = CHI2_3_LOWER..=CHI2_3_UPPER;
        let (mut inside, mut inside_plain, mut total) = (0usize, 0usize, 0usize);
        let (mut sum, mut sum_plain) = (0.0, 0.0);
        for k in 0..runs {
            for n in nees_run(1000 + k) {
                total += 1;
                sum += n.invariant;
                sum_plain += n.plain;
                inside += envelope.contains(&n.invariant) as usize;
                inside_plain += envelope.contains(&n.plain) as usize;
            }
        }
        let fraction = inside as f64 / total as f64;
        (
            fraction >= 0.8,
            format!(
                "{runs} runs, {total} steps; invariant position NEES inside \
                 [{CHI2_3_LOWER}, {CHI2_3_UPPER}] for {:.1}% (need 80%), average {:.2}; \
                 plain p - p_hat NEES inside for {:.1}%, average {:.2}",
                100.0 * fraction,
                sum / total as f64,
                100.0 * inside_plain as f64 / total as f64,
                sum_plain / total as f64
            ),
        )
    })
}
