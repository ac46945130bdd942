//! Zero-velocity detection baseline.

use std::time::Duration;

use wheel_ins::detectors::{evaluate_detector, AmvdDetector, MotionDetector, ProfileConfusion};
use wheel_ins::simulator::{corrupt, generate_truth, ImuCorruption, TrajectorySpec};
use wheel_ins::MotionFlags;

use crate::Outcome;

/// Zero-velocity confusion counts of the proposed detector in the published
/// comparison table, with the precision and recall printed beside them.
pub const TABLE_COUNTS: (u64, u64, u64, u64) = (480_000, 700, 160_000, 9_000);
pub const TABLE_PRECISION: f64 = 0.996;
pub const TABLE_RECALL: f64 = 0.940;

/// Low-noise IMU with vibration growing with speed, so that a standing
/// vehicle is quiet and a moving one is not.
pub fn quiet_imu(seed: u64) -> ImuCorruption {
    ImuCorruption {
        gyro_noise: 0.001,
        accel_noise: 0.01,
        vibration: 0.02,
        seed,
        ..ImuCorruption::none()
    }
}

/// AMVD zero-velocity confusion on a simulated drive with stops.
pub fn amvd_confusion(corruption: &ImuCorruption, seed: u64) -> ProfileConfusion {
    let spec = TrajectorySpec::random_drive(300.0, 2.0, true, seed);
    let truth = generate_truth(&spec).expect("valid scenario");
    let imu = corrupt(&truth, corruption).expect("valid corruption");
    let predicted = AmvdDetector::default().detect_all(&imu);
    let labels: Vec<MotionFlags> = truth.iter().map(|s| s.flags).collect();
    *evaluate_detector(&predicted, &labels)
        .expect("equal lengths")
        .vel()
}

/// Flag sequences realizing the given zero-velocity counts.
pub fn flags_from_counts(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
) -> (Vec<MotionFlags>, Vec<MotionFlags>) {
    let on = MotionFlags::new(true, false, false, false);
    let off = MotionFlags::default();
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (n, p, t) in [(tp, on, on), (fp, on, off), (tn, off, off), (fn_, off, on)] {
        predicted.extend(std::iter::repeat_n(p, n as usize));
        truth.extend(std::iter::repeat_n(t, n as usize));
    }
    (predicted, truth)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn amvd_baseline() -> Outcome {
    Outcome::measure("AMVD baseline", Duration::from_secs(30), || {
        let quiet = amvd_confusion(&quiet_imu(7), 7);
        let amvd_ok = quiet.precision_defined && quiet.precision >= 0.95 && quiet.recall > 0.0;
        let nominal = amvd_confusion(&ImuCorruption::nominal(7), 7);

        let (tp, fp, tn, fn_) = TABLE_COUNTS;
        let (predicted, truth) = flags_from_counts(tp, fp, tn, fn_);
        let table = *evaluate_detector(&predicted, &truth)
            .expect("equal lengths")
            .vel();
        let formula_ok = table.precision == tp as f64 / (tp + fp) as f64
            && table.recall == tp as f64 / (tp + fn_) as f64;
        let table_ok = formula_ok
            && round3(table.precision) == TABLE_PRECISION
            && round3(table.recall) == TABLE_RECALL;

        (
            amvd_ok && table_ok,
            format!(
                "AMVD (W=100, gamma=1e-3) on a low-noise drive: precision {:.4}, recall {:.4} \
                 ({} stationary calls); at the default accelerometer noise it raises {} flags; \
                 table counts tp={tp} fp={fp} fn={fn_} give precision {:.6}, recall {:.6} \
                 against the printed {TABLE_PRECISION:.3} / {TABLE_RECALL:.3}",
                quiet.precision,
                quiet.recall,
                quiet.tp + quiet.fp,
                nominal.tp + nominal.fp,
                table.precision,
                table.recall,
            ),
        )
    })
}
