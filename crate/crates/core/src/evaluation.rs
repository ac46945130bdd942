//! Trajectory error metrics.
//!
//! All errors are planar: only the x and y components of positions take
//! part. Estimates are paired with ground truth by nearest timestamp, within
//! half the median ground-truth sample spacing.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::GroundTruthSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

/// A time-ordered trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    points: Vec<TrajectoryPoint>,
}

impl TrajectoryRecord {
    /// Rejects non-increasing or non-finite timestamps.
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::InvalidTrajectory(format!(
                    "timestamps not strictly increasing at index {}",
                    i + 1
                )));
            }
        }
        if points
            .iter()
            .any(|p| !p.timestamp.is_finite() || !p.position.iter().all(|x| x.is_finite()))
        {
            return Err(Error::InvalidTrajectory("non-finite value".into()));
        }
        Ok(Self { points })
    }

    pub fn from_truth(truth: &[GroundTruthSample]) -> Result<Self> {
        Self::new(
            truth
                .iter()
                .map(|s| TrajectoryPoint {
                    timestamp: s.timestamp,
                    position: s.position_w,
                    rotation: s.rotation,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// 3D polyline length.
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    /// Applies the planar rigid motion `(yaw, translation)` to every point.
    pub fn transformed(&self, yaw: f64, translation: Vector2<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let t = Vector3::new(translation.x, translation.y, 0.0);
        Self {
            points: self
                .points
                .iter()
                .map(|p| TrajectoryPoint {
                    timestamp: p.timestamp,
                    position: r * p.position + t,
                    rotation: r * p.rotation,
                })
                .collect(),
        }
    }
}

/// Index pairs `(estimate, truth)` plus the counts of unpaired samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_estimate: usize,
    pub unmatched_truth: usize,
}

fn median_spacing(r: &TrajectoryRecord) -> Option<f64> {
    let mut gaps: Vec<f64> = r
        .points
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

pub fn associate(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<Association> {
    if est.is_empty() || gt.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let spacing = median_spacing(gt)
        .or_else(|| median_spacing(est))
        .unwrap_or(0.0);
    let tolerance = 0.5 * spacing + 1e-9;
    let times: Vec<f64> = gt.points.iter().map(|p| p.timestamp).collect();
    let mut used = vec![false; times.len()];
    let mut pairs = Vec::new();
    for (i, p) in est.points.iter().enumerate() {
        let k = times.partition_point(|t| *t < p.timestamp);
        let nearest = [k.checked_sub(1), (k < times.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|a, b| {
                (times[*a] - p.timestamp)
                    .abs()
                    .total_cmp(&(times[*b] - p.timestamp).abs())
            });
        if let Some(j) = nearest {
            if (times[j] - p.timestamp).abs() <= tolerance && !used[j] {
                used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(Association {
        unmatched_estimate: est.len() - pairs.len(),
        unmatched_truth: gt.len() - pairs.len(),
        pairs,
    })
}

fn planar(v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}

fn matched_xy(
    est: &TrajectoryRecord,
    gt: &TrajectoryRecord,
) -> Result<(Vec<Vector2<f64>>, Vec<Vector2<f64>>)> {
    let a = associate(est, gt)?;
    Ok(a.pairs
        .iter()
        .map(|&(i, j)| {
            (
                planar(&est.points[i].position),
                planar(&gt.points[j].position),
            )
        })
        .unzip())
}

fn mean_distance(e: &[Vector2<f64>], g: &[Vector2<f64>]) -> f64 {
    e.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>() / e.len() as f64
}

/// Mean planar translation error.
pub fn m_ate(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    let (e, g) = matched_xy(est, gt)?;
    Ok(mean_distance(&e, &g))
}

/// Planar rigid motion `x ↦ R(yaw) x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarAlignment {
    pub yaw: f64,
    pub translation: Vector2<f64>,
}

impl PlanarAlignment {
    pub const IDENTITY: PlanarAlignment = PlanarAlignment {
        yaw: 0.0,
        translation: Vector2::new(0.0, 0.0),
    };

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y) + self.translation
    }

    fn mean_error(&self, e: &[Vector2<f64>], g: &[Vector2<f64>]) -> f64 {
        e.iter()
            .zip(g)
            .map(|(a, b)| (self.apply(a) - b).norm())
            .sum::<f64>()
            / e.len() as f64
    }
}

/// Closed-form minimizer of `Σ wᵢ ‖R eᵢ + t − gᵢ‖²`.
fn weighted_procrustes(e: &[Vector2<f64>], g: &[Vector2<f64>], w: &[f64]) -> PlanarAlignment {
    let total: f64 = w.iter().sum();
    let centroid = |pts: &[Vector2<f64>]| {
        pts.iter()
            .zip(w)
            .map(|(p, wi)| p * *wi)
            .sum::<Vector2<f64>>()
            / total
    };
    let (ce, cg) = (centroid(e), centroid(g));
    let (mut dot, mut cross) = (0.0, 0.0);
    for ((a, b), wi) in e.iter().zip(g).zip(w) {
        let (a, b) = (a - ce, b - cg);
        dot += wi * a.dot(&b);
        cross += wi * (a.x * b.y - a.y * b.x);
    }
    let yaw = cross.atan2(dot);
    let rotated = PlanarAlignment {
        yaw,
        translation: Vector2::zeros(),
    }
    .apply(&ce);
    PlanarAlignment {
        yaw,
        translation: cg - rotated,
    }
}

/// Least-squares planar alignment: minimizes the summed squared planar
/// error of `R e + t` against `g`.
pub fn least_squares_alignment(e: &[Vector2<f64>], g: &[Vector2<f64>]) -> Result<PlanarAlignment> {
    if e.len() != g.len() || e.is_empty() {
        return Err(Error::LengthMismatch {
            predicted: e.len(),
            truth: g.len(),
        });
    }
    let n = e.len() as f64;
    let spread = |pts: &[Vector2<f64>]| {
        let c = pts.iter().sum::<Vector2<f64>>() / n;
        pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>()
    };
    if spread(e) <= f64::EPSILON || spread(g) <= f64::EPSILON {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    Ok(weighted_procrustes(e, g, &vec![1.0; e.len()]))
}

const ALIGN_MAX_ITER: usize = 200;
const ALIGN_TOL: f64 = 1e-12;

/// Planar alignment minimizing the mean planar error itself.
///
/// Each iteration solves a weighted least-squares alignment with weights
/// `1 / ‖rᵢ‖`, which majorizes the mean error, so the objective never
/// increases. Iterations start from both the least-squares solution and
/// the identity; the better result is kept, so the aligned error never
/// exceeds the unaligned one.
pub fn planar_alignment(e: &[Vector2<f64>], g: &[Vector2<f64>]) -> Result<PlanarAlignment> {
    let ls = least_squares_alignment(e, g)?;
    let refine = |mut a: PlanarAlignment| {
        let mut cost = a.mean_error(e, g);
        for _ in 0..ALIGN_MAX_ITER {
            let w: Vec<f64> = e
                .iter()
                .zip(g)
                .map(|(p, q)| 1.0 / (a.apply(p) - q).norm().max(1e-12))
                .collect();
            let next = weighted_procrustes(e, g, &w);
            let next_cost = next.mean_error(e, g);
            if !(next_cost < cost) {
                break;
            }
            let done = cost - next_cost <= ALIGN_TOL * cost.max(1.0);
            a = next;
            cost = next_cost;
            if done {
                break;
            }
        }
        (a, cost)
    };
    let (a, ca) = refine(ls);
    let (b, cb) = refine(PlanarAlignment::IDENTITY);
    Ok(if ca <= cb { a } else { b })
}

/// Mean planar error after the best planar rigid alignment of the estimate.
pub fn aligned_m_ate(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    let (e, g) = matched_xy(est, gt)?;
    Ok(planar_alignment(&e, &g)?.mean_error(&e, &g))
}

/// Planar distance between the last associated pair.
pub fn final_distance(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<f64> {
    let (e, g) = matched_xy(est, gt)?;
    Ok((e[e.len() - 1] - g[g.len() - 1]).norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub m_ate: f64,
    /// `None` when the matched points are degenerate.
    pub aligned_m_ate: Option<f64>,
    pub final_distance: f64,
    /// Ground-truth path length, m.
    pub length: f64,
    /// Ground-truth duration, s.
    pub duration: f64,
    pub matched: usize,
    pub unmatched_estimate: usize,
    pub unmatched_truth: usize,
}

impl MetricsReport {
    pub fn compute(est: &TrajectoryRecord, gt: &TrajectoryRecord) -> Result<Self> {
        let a = associate(est, gt)?;
        let aligned = match aligned_m_ate(est, gt) {
            Ok(v) => Some(v),
            Err(Error::DegenerateGeometry(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            m_ate: m_ate(est, gt)?,
            aligned_m_ate: aligned,
            final_distance: final_distance(est, gt)?,
            length: gt.length(),
            duration: gt.duration(),
            matched: a.pairs.len(),
            unmatched_estimate: a.unmatched_estimate,
            unmatched_truth: a.unmatched_truth,
        })
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let aligned = self
            .aligned_m_ate
            .map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "m_ate={}\naligned_m_ate={}\nfinal_distance={}\nlength={}\nduration={}\nmatched={}\nunmatched_estimate={}\nunmatched_truth={}\n",
            self.m_ate,
            aligned,
            self.final_distance,
            self.length,
            self.duration,
            self.matched,
            self.unmatched_estimate,
            self.unmatched_truth
        )
    }
}
