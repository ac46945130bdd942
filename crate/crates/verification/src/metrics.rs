//! Trajectory metric properties.

use std::f64::consts::PI;
use std::time::Duration;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wheel_ins::evaluation::{
    aligned_m_ate, final_distance, m_ate, TrajectoryPoint, TrajectoryRecord,
};

use crate::Outcome;

fn record(points: impl IntoIterator<Item = Vector3<f64>>) -> TrajectoryRecord {
    TrajectoryRecord::new(
        points
            .into_iter()
            .enumerate()
            .map(|(i, position)| TrajectoryPoint {
                timestamp: i as f64 * 0.01,
                position,
                rotation: Rotation3::identity(),
            })
            .collect(),
    )
    .expect("increasing timestamps")
}

/// A planar random walk and a drifting, noisy copy of it.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (TrajectoryRecord, TrajectoryRecord) {
    let n = rng.random_range(20..300);
    let mut p = Vector3::zeros();
    let mut heading = rng.random_range(-PI..PI);
    let drift = rng.random_range(-0.02..0.02);
    let mut gt = Vec::with_capacity(n);
    let mut est = Vec::with_capacity(n);
    for i in 0..n {
        heading += rng.random_range(-0.2..0.2);
        p += Vector3::new(heading.cos(), heading.sin(), rng.random_range(-0.1..0.1));
        gt.push(p);
        let yaw = drift * i as f64;
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let noise = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        est.push(r * p + noise + Vector3::new(0.01, -0.02, 0.0) * i as f64);
    }
    (record(est), record(gt))
}

pub fn metric_properties() -> Outcome {
    Outcome::measure("Metrics properties", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut violations = 0;
        let mut worst_gap = f64::INFINITY;
        let mut worst_invariance = 0.0f64;
        for _ in 0..100 {
            let (est, gt) = random_pair(&mut rng);
            let raw = m_ate(&est, &gt).expect("overlap");
            let aligned = aligned_m_ate(&est, &gt).expect("non-degenerate");
            if aligned > raw {
                violations += 1;
            }
            worst_gap = worst_gap.min(raw - aligned);

            let yaw = rng.random_range(-PI..PI);
            let shift = Vector2::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
            let (est2, gt2) = (est.transformed(yaw, shift), gt.transformed(yaw, shift));
            for (a, b) in [
                (raw, m_ate(&est2, &gt2).expect("overlap")),
                (aligned, aligned_m_ate(&est2, &gt2).expect("non-degenerate")),
                (
                    final_distance(&est, &gt).expect("overlap"),
                    final_distance(&est2, &gt2).expect("overlap"),
                ),
            ] {
                worst_invariance = worst_invariance.max((a - b).abs());
            }
        }

        let grid = (0..50).map(|i| Vector3::new((i % 7) as f64, (i / 7) as f64, 0.0));
        let gt = record(grid.clone());
        let est = record(grid.map(|p| p + Vector3::new(3.0, 4.0, 0.0)));
        let offset = m_ate(&est, &gt).expect("overlap");

        (
            violations == 0 && worst_invariance < 1e-9 && offset == 5.0,
            format!(
                "100 random pairs: {violations} with aligned > raw (smallest margin {worst_gap:.1e} m); \
                 rigid-transform deviation {worst_invariance:.1e} m (limit 1e-9); \
                 3-4-5 offset m-ATE = {offset}"
            ),
        )
    })
}
