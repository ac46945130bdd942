use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector2, Vector3};
use proptest::prelude::*;
use wheel_ins::detectors::{
    amvd_detect, detect_step, oracle_labels, oracle_step_labels, DetectorHiddenState,
    DetectorWeights, NetworkDetector,
};
use wheel_ins::evaluation::{
    aligned_m_ate, final_distance, m_ate, TrajectoryPoint, TrajectoryRecord,
};
use wheel_ins::iekf::{error_dynamics, jacobian_f, stack_measurements, step, update, FilterParams};
use wheel_ins::io::{read_imu_csv, write_imu_csv};
use wheel_ins::lie::{exp_so3, Se23, Tangent9};
use wheel_ins::pipeline::run_filter;
use wheel_ins::simulator::{
    corrupt, generate_truth, GroundTruthSample, ImuCorruption, Segment, TrajectorySpec,
};
use wheel_ins::state::propagate_nav;
use wheel_ins::{FilterState, Gravity, ImuSample, InitialCovariance, MotionFlags, NavState};

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-range..range, -range..range, -range..range].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    vec3(1.8).prop_map(|phi| exp_so3(&phi))
}

fn nav_state() -> impl Strategy<Value = NavState<f64>> {
    (rotation(), vec3(20.0), vec3(500.0), vec3(0.01), vec3(0.1)).prop_map(
        |(rotation, velocity, position, gyro_bias, accel_bias)| NavState {
            rotation,
            velocity,
            position,
            gyro_bias,
            accel_bias,
        },
    )
}

fn flags() -> impl Strategy<Value = MotionFlags> {
    any::<[bool; 4]>().prop_map(MotionFlags::from_array)
}

fn imu_sample() -> impl Strategy<Value = ImuSample<f64>> {
    (vec3(1.0), vec3(3.0))
        .prop_map(|(w, a)| ImuSample::new(0.0, w, a + Vector3::new(0.0, 0.0, 9.81)))
}

fn replay(truth: &[GroundTruthSample]) -> f64 {
    let g = Gravity::default();
    let mut s = NavState {
        rotation: truth[0].rotation,
        velocity: truth[0].velocity_w,
        position: truth[0].position_w,
        ..NavState::default()
    };
    let mut worst = 0.0f64;
    for w in truth.windows(2) {
        s = propagate_nav(
            &s,
            &w[0].omega_body,
            &w[0].accel_body,
            w[1].timestamp - w[0].timestamp,
            &g,
        )
        .unwrap();
        worst = worst.max((s.position - w[1].position_w).norm());
    }
    worst
}

fn record(positions: &[Vector3<f64>]) -> TrajectoryRecord {
    TrajectoryRecord::new(
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| TrajectoryPoint {
                timestamp: i as f64 * 0.1,
                position: *p,
                rotation: Rotation3::identity(),
            })
            .collect(),
    )
    .unwrap()
}

fn trajectory_pair() -> impl Strategy<Value = (Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(vec3(100.0), n),
            prop::collection::vec(vec3(100.0), n),
        )
    })
}

fn fixture_weights() -> Option<Arc<DetectorWeights>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/detector_fixture.bin");
    path.exists()
        .then(|| Arc::new(DetectorWeights::load(&path).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exp_so3_is_orthonormal(phi in vec3(10.0)) {
        let r = exp_so3(&phi);
        let m = r.matrix();
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exp_se23_rotation_block_is_exp_so3(rot in vec3(3.0), rest in prop::array::uniform6(-50.0..50.0f64)) {
        let xi = Tangent9::from_column_slice(&[
            rot.x, rot.y, rot.z, rest[0], rest[1], rest[2], rest[3], rest[4], rest[5],
        ]);
        let g = Se23::exp(&xi);
        prop_assert_eq!(g.rotation, exp_so3(&rot));
        let m = g.to_matrix();
        for (i, j) in [(3, 0), (3, 1), (3, 2), (4, 0), (4, 1), (4, 2), (3, 4), (4, 3)] {
            prop_assert_eq!(m[(i, j)], 0.0);
        }
        prop_assert_eq!(m[(3, 3)], 1.0);
        prop_assert_eq!(m[(4, 4)], 1.0);
    }

    #[test]
    fn propagation_keeps_biases(s in nav_state(), w in vec3(2.0), a in vec3(20.0), dt in 1e-4..0.05f64) {
        let next = propagate_nav(&s, &w, &a, dt, &Gravity::default()).unwrap();
        prop_assert_eq!(next.gyro_bias, s.gyro_bias);
        prop_assert_eq!(next.accel_bias, s.accel_bias);
    }

    #[test]
    fn error_dynamics_core_is_state_independent(
        s1 in nav_state(), s2 in nav_state(), f in flags(), dt in 1e-3..0.05f64
    ) {
        let g = Gravity::default();
        let a1 = error_dynamics(&s1, f, &g);
        let a2 = error_dynamics(&s2, f, &g);
        prop_assert_eq!(a1.fixed_view::<9, 9>(0, 0), a2.fixed_view::<9, 9>(0, 0));
        let f1 = jacobian_f(&s1, f, dt, &g);
        let f2 = jacobian_f(&s2, f, dt, &g);
        let core = |m: &wheel_ins::iekf::Matrix15<f64>| {
            (m.fixed_view::<9, 9>(0, 0) - nalgebra::SMatrix::<f64, 9, 9>::identity()) / dt
        };
        prop_assert_eq!(core(&f1), core(&f2));
    }

    #[test]
    fn lateral_and_vertical_are_suppressed_under_zero_velocity(s in nav_state(), sample in imu_sample()) {
        let params = FilterParams::<f64>::default();
        let fs = FilterState::new(s, InitialCovariance::default().to_matrix());
        let post = |f: MotionFlags| {
            let m = stack_measurements(&fs.nav, f, &sample, &params.measurement, &params.gravity)
                .unwrap();
            update(&fs, &m).unwrap()
        };
        prop_assert_eq!(
            post(MotionFlags::new(true, false, true, true)),
            post(MotionFlags::new(true, false, false, false))
        );
    }

    #[test]
    fn amvd_is_translation_invariant(
        base in prop::collection::vec(vec3(1.0), 100..140),
        scale in prop::sample::select(vec![1e-3, 0.1]),
        offset in vec3(10.0),
    ) {
        let a: Vec<Vector3<f64>> = base.iter().map(|v| v * scale).collect();
        let shifted: Vec<Vector3<f64>> = a.iter().map(|v| v + offset).collect();
        prop_assert_eq!(
            amvd_detect(&a, 100, 1e-3).unwrap(),
            amvd_detect(&shifted, 100, 1e-3).unwrap()
        );
    }

    #[test]
    fn zero_velocity_implies_lateral_and_vertical(
        r in rotation(), dir in vec3(1.0), speed in 0.0..0.02f64, w in vec3(0.01),
        r2 in rotation(), v2 in vec3(1.0),
    ) {
        let v = dir.try_normalize(1e-9).unwrap_or_else(Vector3::x) * speed;
        let f = oracle_labels(&v, &w, &r);
        if f.vel {
            prop_assert!(f.lat && f.up);
        }
        let fs = oracle_step_labels((&v, &r), (&v2, &r2), &w);
        if fs.vel {
            prop_assert!(fs.lat && fs.up);
        }
    }

    #[test]
    fn aligned_error_never_exceeds_raw_error((e, g) in trajectory_pair()) {
        let est = record(&e);
        let gt = record(&g);
        let raw = m_ate(&est, &gt).unwrap();
        let aligned = aligned_m_ate(&est, &gt).unwrap();
        prop_assert!(aligned <= raw + 1e-12, "aligned {aligned} raw {raw}");
    }

    #[test]
    fn metrics_are_rigid_invariant(
        (e, g) in trajectory_pair(), yaw in -PI..PI, tx in -1e3..1e3f64, ty in -1e3..1e3f64
    ) {
        let est = record(&e);
        let gt = record(&g);
        let t = Vector2::new(tx, ty);
        let est2 = est.transformed(yaw, t);
        let gt2 = gt.transformed(yaw, t);
        prop_assert!((m_ate(&est, &gt).unwrap() - m_ate(&est2, &gt2).unwrap()).abs() < 1e-9);
        prop_assert!(
            (final_distance(&est, &gt).unwrap() - final_distance(&est2, &gt2).unwrap()).abs() < 1e-9
        );
        prop_assert!(
            (aligned_m_ate(&est, &gt).unwrap() - aligned_m_ate(&est2, &gt2).unwrap()).abs() < 1e-9
        );
    }

    #[test]
    fn imu_csv_round_trips_exactly(
        rows in prop::collection::vec((1e-4..1.0f64, vec3(10.0), vec3(100.0)), 1..50),
        t0 in -1e3..1e6f64,
    ) {
        let mut t = t0;
        let samples: Vec<ImuSample<f64>> = rows
            .iter()
            .map(|(dt, w, a)| {
                t += dt;
                ImuSample::new(t, *w, *a)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        write_imu_csv(&path, &samples).unwrap();
        prop_assert_eq!(read_imu_csv(&path).unwrap(), samples);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulator_closes_and_is_deterministic(seed in any::<u64>(), stops in any::<bool>()) {
        let spec = TrajectorySpec::random_drive(40.0, 1.0, stops, seed);
        let truth = generate_truth(&spec).unwrap();
        prop_assert!(replay(&truth) < 1e-6);
        prop_assert_eq!(&generate_truth(&spec).unwrap(), &truth);
        let c = ImuCorruption::nominal(seed);
        prop_assert_eq!(corrupt(&truth, &c).unwrap(), corrupt(&truth, &c).unwrap());
    }

    #[test]
    fn simulator_flags_follow_segments(seed in any::<u64>()) {
        let spec = TrajectorySpec::random_drive(60.0, 2.0, true, seed);
        let truth = generate_truth(&spec).unwrap();
        let dt = 1.0 / spec.rate_hz;
        let mut t0 = 0.0;
        for seg in &spec.segments {
            let t1 = t0 + seg.duration();
            let inside = truth
                .iter()
                .filter(|s| s.timestamp > t0 + 1.5 * dt && s.timestamp < t1 - 1.5 * dt);
            match seg {
                Segment::Stop { .. } => {
                    for s in inside {
                        prop_assert_eq!(s.flags, MotionFlags::ALL, "t = {}", s.timestamp);
                    }
                }
                Segment::Straight { speed, .. } if *speed > 0.0 => {
                    for s in inside {
                        prop_assert!(!s.flags.vel && s.flags.lat && s.flags.up, "t = {}", s.timestamp);
                    }
                }
                _ => {}
            }
            t0 = t1;
        }
    }

    #[test]
    fn detector_steps_fold_to_the_streaming_run(
        rows in prop::collection::vec((vec3(0.5), vec3(3.0)), 1..60)
    ) {
        let Some(weights) = fixture_weights() else { return Ok(()); };
        let imu: Vec<ImuSample<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, (w, a))| ImuSample::new(i as f64 * 0.01, *w, a + Vector3::new(0.0, 0.0, 9.81)))
            .collect();
        let mut det = NetworkDetector::new(weights.clone());
        let mut hidden = DetectorHiddenState::zeros(&weights);
        for s in &imu {
            let (a, next) = detect_step(&weights, &hidden, s).unwrap();
            let (b, again) = detect_step(&weights, &hidden, s).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(&next, &again);
            prop_assert_eq!(det.scores(s), a);
            hidden = next;
        }
    }
}

#[test]
fn covariance_stays_symmetric_psd_over_long_runs() {
    let spec = TrajectorySpec::random_drive(1001.0, 2.0, true, 11);
    let truth = generate_truth(&spec).unwrap();
    assert!(truth.len() > 100_000, "{} samples", truth.len());
    let imu = corrupt(&truth, &ImuCorruption::nominal(11)).unwrap();
    let flags: Vec<MotionFlags> = truth.iter().map(|s| s.flags).collect();
    let nav = NavState {
        rotation: truth[0].rotation,
        velocity: truth[0].velocity_w,
        position: truth[0].position_w,
        ..NavState::default()
    };
    let params = FilterParams::default();
    let mut fs = FilterState::new(nav, InitialCovariance::default().to_matrix());
    let mut worst_asym = 0.0f64;
    let mut worst_eig = f64::INFINITY;
    for (n, w) in imu.windows(2).enumerate() {
        fs = step(
            &fs,
            &w[0],
            flags[n],
            &params,
            w[1].timestamp - w[0].timestamp,
        )
        .unwrap();
        let p = fs.cov.0;
        worst_asym = worst_asym.max((p - p.transpose()).amax());
        worst_eig = worst_eig.min(SymmetricEigen::new(p).eigenvalues.min());
    }
    assert!(worst_asym <= 1e-9, "asymmetry {worst_asym:e}");
    assert!(worst_eig >= -1e-9, "min eigenvalue {worst_eig:e}");
    assert!((fs.nav.position - truth.last().unwrap().position_w).norm() < 50.0);
    let again = run_filter(
        &imu,
        &flags,
        &params,
        FilterState::new(nav, InitialCovariance::default().to_matrix()),
    )
    .unwrap();
    assert_eq!(again.states.last().unwrap(), &fs);
}
