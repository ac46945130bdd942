//! Rust inference against reference scores produced by the trainer's
//! framework for the checked-in fixture weights.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use wheel_ins::detectors::{
    detect_step, threshold_scores, DetectorHiddenState, DetectorWeights, MotionDetector,
    NetworkDetector,
};
use wheel_ins::io::read_imu_csv;

const TOLERANCE: f64 = 1e-5;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn fixtures_present() -> bool {
    let ok = [
        "detector_fixture.bin",
        "detector_fixture_imu.csv",
        "detector_fixture_scores.csv",
    ]
    .iter()
    .all(|f| fixture(f).exists());
    if !ok {
        eprintln!("detector fixture missing, skipping");
    }
    ok
}

fn reference_scores() -> Vec<(f64, [f64; 4])> {
    let mut reader = csv::Reader::from_path(fixture("detector_fixture_scores.csv")).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
            (v[0], [v[1], v[2], v[3], v[4]])
        })
        .collect()
}

#[test]
fn fixture_weights_validate_and_round_trip() {
    if !fixtures_present() {
        return;
    }
    let bytes = std::fs::read(fixture("detector_fixture.bin")).unwrap();
    let w = DetectorWeights::from_bytes(&bytes).unwrap();
    w.validate().unwrap();
    assert_eq!(w.to_bytes(), bytes);
}

#[test]
fn streaming_scores_match_reference() {
    if !fixtures_present() {
        return;
    }
    let weights = Arc::new(DetectorWeights::load(fixture("detector_fixture.bin")).unwrap());
    let imu = read_imu_csv(&fixture("detector_fixture_imu.csv")).unwrap();
    let reference = reference_scores();
    assert_eq!(imu.len(), reference.len());

    let mut det = NetworkDetector::new(weights.clone());
    let mut worst = 0.0f64;
    for (sample, (t, want)) in imu.iter().zip(&reference) {
        assert!((sample.timestamp - t).abs() < 1e-9);
        let got = det.scores(sample);
        for k in 0..4 {
            worst = worst.max((got.0[k] - want[k]).abs());
        }
    }
    assert!(worst < TOLERANCE, "max score deviation {worst:e}");
}

#[test]
fn functional_step_and_flags_agree_with_streaming() {
    if !fixtures_present() {
        return;
    }
    let weights = Arc::new(DetectorWeights::load(fixture("detector_fixture.bin")).unwrap());
    let imu = read_imu_csv(&fixture("detector_fixture_imu.csv")).unwrap();

    let mut hidden = DetectorHiddenState::zeros(&weights);
    let mut folded = Vec::with_capacity(imu.len());
    for s in &imu {
        let (scores, next) = detect_step(&weights, &hidden, s).unwrap();
        folded.push(threshold_scores(&scores, &weights));
        hidden = next;
    }
    let streamed = NetworkDetector::new(weights).detect_all(&imu);
    assert_eq!(folded, streamed);
}

#[test]
fn f32_inputs_stay_close_to_reference() {
    if !fixtures_present() {
        return;
    }
    let weights = Arc::new(DetectorWeights::load(fixture("detector_fixture.bin")).unwrap());
    let imu = read_imu_csv(&fixture("detector_fixture_imu.csv")).unwrap();
    let reference = reference_scores();
    let mut det = NetworkDetector::new(weights);
    for (s, (_, want)) in imu.iter().zip(&reference) {
        let s32 = wheel_ins::ImuSample::<f32>::new(
            s.timestamp as f32,
            s.gyro.cast::<f32>(),
            s.accel.cast::<f32>(),
        );
        let got = det.scores(&s32);
        for k in 0..4 {
            assert!((got.0[k] - want[k]).abs() < 1e-4);
        }
    }
}
