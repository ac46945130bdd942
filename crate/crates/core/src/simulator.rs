//! Synthetic wheeled-vehicle trajectories and IMU corruption.
//!
//! A [`TrajectorySpec`] is compiled into analytic pieces (constant body rate
//! with linear speed, or a damped rotational oscillation at rest). Positions
//! are sampled at the sample times and attitudes at the middle of each step;
//! velocity is the forward secant of position and the specific force solves
//! the Euler velocity equation, so
//! feeding the exact `(ω_n, a_n)` through
//! [`propagate_nav`](crate::state::propagate_nav) reproduces the samples up
//! to round-off.
//!
//! Noise convention: `gyro_noise`/`accel_noise` are per-sample standard
//! deviations; bias random-walk increments have standard deviation
//! `σ_b · dt` per sample. Both match how the filter's process noise is
//! scaled.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detectors::{oracle_step_labels, MotionFlags};
use crate::error::{Error, Result};
use crate::lie::{exp_so3, log_so3, so3_left_jacobian};
use crate::state::{Gravity, ImuSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    /// Standing still.
    Stop { duration: f64 },
    /// Constant speed along the current heading; the speed is set instantly.
    Straight { speed: f64, duration: f64 },
    /// Linear speed change to `target_speed`, heading held.
    Accelerate { target_speed: f64, duration: f64 },
    /// Planar constant-rate turn at constant speed.
    Arc {
        speed: f64,
        yaw_rate: f64,
        duration: f64,
    },
    /// Climb onto a slope of the given grade (rise/run) and back down, with
    /// constant-rate pitch transitions of `transition` seconds at each end.
    Ramp {
        speed: f64,
        grade: f64,
        duration: f64,
        #[serde(default = "default_transition")]
        transition: f64,
    },
    /// Damped pitch oscillation at rest (suspension settling after braking).
    Settle {
        duration: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default = "default_damping")]
        damping: f64,
    },
}

fn default_transition() -> f64 {
    1.0
}

fn default_damping() -> f64 {
    2.0
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Stop { duration }
            | Segment::Straight { duration, .. }
            | Segment::Accelerate { duration, .. }
            | Segment::Arc { duration, .. }
            | Segment::Ramp { duration, .. }
            | Segment::Settle { duration, .. } => duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub segments: Vec<Segment>,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Initial heading, rad.
    #[serde(default)]
    pub initial_yaw: f64,
    /// Seeds the random scenario generators; generation itself is
    /// deterministic.
    #[serde(default)]
    pub seed: u64,
}

/// Acceleration used when scripted drives leave or reach a stop, m/s².
/// Above 2 m/s² the first moving step at 100 Hz already exceeds the
/// zero-velocity labeling threshold, so stop labels never cover motion.
pub const DRIVE_ACCEL: f64 = 2.5;

fn default_rate() -> f64 {
    100.0
}

impl TrajectorySpec {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self {
            segments,
            rate_hz: default_rate(),
            initial_yaw: 0.0,
            seed: 0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrajectory(m));
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate {} must be positive", self.rate_hz));
        }
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration() > 0.0 && s.duration().is_finite()) {
                return bad(format!("segment {i}: duration must be positive"));
            }
            let speed = match *s {
                Segment::Straight { speed, .. }
                | Segment::Arc { speed, .. }
                | Segment::Ramp { speed, .. } => speed,
                Segment::Accelerate { target_speed, .. } => target_speed,
                _ => 0.0,
            };
            if !(speed >= 0.0 && speed.is_finite()) {
                return bad(format!("segment {i}: speed must be non-negative"));
            }
            if let Segment::Ramp {
                duration,
                transition,
                grade,
                ..
            } = *s
            {
                if !(transition > 0.0 && 2.0 * transition < duration && grade.is_finite()) {
                    return bad(format!(
                        "segment {i}: ramp needs 0 < 2·transition < duration"
                    ));
                }
            }
            if let Segment::Settle {
                amplitude,
                frequency,
                damping,
                ..
            } = *s
            {
                if !(amplitude.is_finite() && frequency > 0.0 && damping >= 0.0) {
                    return bad(format!("segment {i}: bad settle parameters"));
                }
            }
        }
        Ok(())
    }

    /// Stops, straights, turns in both directions and a ramp; 60 s.
    pub fn mixed_60s() -> Self {
        use Segment::*;
        Self::new(vec![
            Stop { duration: 3.0 },
            Accelerate {
                target_speed: 8.0,
                duration: 3.0,
            },
            Straight {
                speed: 8.0,
                duration: 7.0,
            },
            Arc {
                speed: 8.0,
                yaw_rate: 0.2,
                duration: 8.0,
            },
            Straight {
                speed: 8.0,
                duration: 4.0,
            },
            Ramp {
                speed: 8.0,
                grade: 0.08,
                duration: 10.0,
                transition: 2.0,
            },
            Accelerate {
                target_speed: 0.0,
                duration: 3.0,
            },
            Stop { duration: 4.0 },
            Accelerate {
                target_speed: 6.0,
                duration: 2.0,
            },
            Arc {
                speed: 6.0,
                yaw_rate: -0.25,
                duration: 8.0,
            },
            Straight {
                speed: 6.0,
                duration: 8.0,
            },
        ])
    }

    /// Random urban-style drive of roughly `duration` seconds, opening with
    /// `initial_stop` seconds at rest. With `stops` false the vehicle never
    /// halts after the opening stop.
    pub fn random_drive(duration: f64, initial_stop: f64, stops: bool, seed: u64) -> Self {
        use Segment::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segs = vec![Stop {
            duration: initial_stop,
        }];
        let mut t = initial_stop;
        let mut speed = rng.random_range(6.0..12.0);
        let accel_time = (speed / DRIVE_ACCEL).max(1.0);
        segs.push(Accelerate {
            target_speed: speed,
            duration: accel_time,
        });
        t += accel_time;
        while t < duration {
            let remaining = duration - t;
            let choice = rng.random_range(0..10);
            let seg = match choice {
                0..=2 => Straight {
                    speed,
                    duration: rng.random_range(3.0..12.0),
                },
                3..=5 => {
                    let rate =
                        rng.random_range(0.08..0.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Arc {
                        speed,
                        yaw_rate: rate,
                        duration: rng.random_range(3.0..10.0),
                    }
                }
                6 => {
                    let target = rng.random_range(5.0..14.0);
                    let d = ((target - speed).abs() / 1.5).max(1.0);
                    speed = target;
                    Accelerate {
                        target_speed: target,
                        duration: d,
                    }
                }
                7 => Ramp {
                    speed,
                    grade: rng.random_range(-0.08..0.08),
                    duration: rng.random_range(6.0..12.0),
                    transition: 2.0,
                },
                _ if stops && remaining > 15.0 => {
                    let brake = (speed / DRIVE_ACCEL).max(1.0);
                    segs.push(Accelerate {
                        target_speed: 0.0,
                        duration: brake,
                    });
                    segs.push(Settle {
                        duration: 1.0,
                        amplitude: 0.01,
                        frequency: 1.5,
                        damping: 3.0,
                    });
                    let stop = rng.random_range(2.0..8.0);
                    segs.push(Stop { duration: stop });
                    let go = (speed / DRIVE_ACCEL).max(1.0);
                    t += brake + 1.0 + stop;
                    Accelerate {
                        target_speed: speed,
                        duration: go,
                    }
                }
                _ => Straight {
                    speed,
                    duration: rng.random_range(2.0..6.0),
                },
            };
            t += seg.duration();
            segs.push(seg);
        }
        Self {
            segments: segs,
            rate_hz: default_rate(),
            initial_yaw: 0.0,
            seed,
        }
    }
}

/// Exact ground truth at one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: f64,
    pub rotation: Rotation3<f64>,
    pub velocity_w: Vector3<f64>,
    pub position_w: Vector3<f64>,
    /// Body angular rate over `[t_n, t_{n+1}]`.
    pub omega_body: Vector3<f64>,
    /// Specific force over `[t_n, t_{n+1}]`.
    pub accel_body: Vector3<f64>,
    pub flags: MotionFlags,
}

impl GroundTruthSample {
    pub fn imu(&self) -> ImuSample<f64> {
        ImuSample::new(self.timestamp, self.omega_body, self.accel_body)
    }
}

#[derive(Clone, Copy, Debug)]
enum Motion {
    /// Constant body rate; speed `speed0 + accel·τ` along body x.
    /// `omega` and `accel` are never both non-zero.
    Kinematic {
        omega: Vector3<f64>,
        speed0: f64,
        accel: f64,
    },
    /// `R = R0 exp(axis · A e^{−dτ} sin 2πfτ)`, at rest.
    Oscillation {
        axis: Vector3<f64>,
        amplitude: f64,
        frequency: f64,
        damping: f64,
    },
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    t0: f64,
    duration: f64,
    r0: Rotation3<f64>,
    p0: Vector3<f64>,
    motion: Motion,
}

impl Piece {
    fn pose(&self, t: f64) -> (Rotation3<f64>, Vector3<f64>) {
        let tau = t - self.t0;
        match self.motion {
            Motion::Kinematic {
                omega,
                speed0,
                accel,
            } => {
                if omega == Vector3::zeros() {
                    let dist = speed0 * tau + 0.5 * accel * tau * tau;
                    (self.r0, self.p0 + self.r0 * Vector3::x() * dist)
                } else {
                    let phi = omega * tau;
                    let r = self.r0 * exp_so3(&phi);
                    let p = self.p0
                        + self.r0 * (so3_left_jacobian(&phi) * Vector3::x()) * (speed0 * tau);
                    (r, p)
                }
            }
            Motion::Oscillation {
                axis,
                amplitude,
                frequency,
                damping,
            } => {
                let angle = amplitude
                    * (-damping * tau).exp()
                    * (std::f64::consts::TAU * frequency * tau).sin();
                (self.r0 * exp_so3(&(axis * angle)), self.p0)
            }
        }
    }

    fn end_speed(&self) -> f64 {
        match self.motion {
            Motion::Kinematic { speed0, accel, .. } => speed0 + accel * self.duration,
            Motion::Oscillation { .. } => 0.0,
        }
    }
}

fn compile(spec: &TrajectorySpec) -> Vec<Piece> {
    let mut pieces: Vec<Piece> = Vec::new();
    let mut t = 0.0;
    let mut r = exp_so3(&(Vector3::z() * spec.initial_yaw));
    let mut p = Vector3::zeros();
    let mut speed = 0.0;

    let mut push = |duration: f64,
                    motion: Motion,
                    t: &mut f64,
                    r: &mut Rotation3<f64>,
                    p: &mut Vector3<f64>,
                    speed: &mut f64| {
        let piece = Piece {
            t0: *t,
            duration,
            r0: *r,
            p0: *p,
            motion,
        };
        let (r1, p1) = piece.pose(*t + duration);
        *t += duration;
        *r = r1;
        *p = p1;
        *speed = piece.end_speed();
        pieces.push(piece);
    };
    let still = |s: f64| Motion::Kinematic {
        omega: Vector3::zeros(),
        speed0: s,
        accel: 0.0,
    };

    for seg in &spec.segments {
        match *seg {
            Segment::Stop { duration } => {
                push(duration, still(0.0), &mut t, &mut r, &mut p, &mut speed)
            }
            Segment::Straight { speed: s, duration } => {
                push(duration, still(s), &mut t, &mut r, &mut p, &mut speed)
            }
            Segment::Accelerate {
                target_speed,
                duration,
            } => {
                let m = Motion::Kinematic {
                    omega: Vector3::zeros(),
                    speed0: speed,
                    accel: (target_speed - speed) / duration,
                };
                push(duration, m, &mut t, &mut r, &mut p, &mut speed)
            }
            Segment::Arc {
                speed: s,
                yaw_rate,
                duration,
            } => {
                let m = Motion::Kinematic {
                    omega: Vector3::new(0.0, 0.0, yaw_rate),
                    speed0: s,
                    accel: 0.0,
                };
                push(duration, m, &mut t, &mut r, &mut p, &mut speed)
            }
            Segment::Ramp {
                speed: s,
                grade,
                duration,
                transition,
            } => {
                // nose-up is a negative rotation about body y
                let rate = -grade.atan() / transition;
                let pitch = |rate: f64| Motion::Kinematic {
                    omega: Vector3::new(0.0, rate, 0.0),
                    speed0: s,
                    accel: 0.0,
                };
                push(transition, pitch(rate), &mut t, &mut r, &mut p, &mut speed);
                push(
                    duration - 2.0 * transition,
                    still(s),
                    &mut t,
                    &mut r,
                    &mut p,
                    &mut speed,
                );
                push(transition, pitch(-rate), &mut t, &mut r, &mut p, &mut speed);
            }
            Segment::Settle {
                duration,
                amplitude,
                frequency,
                damping,
            } => {
                let m = Motion::Oscillation {
                    axis: Vector3::y(),
                    amplitude,
                    frequency,
                    damping,
                };
                push(duration, m, &mut t, &mut r, &mut p, &mut speed);
                // continue from the analytic end pose with zero speed
                speed = 0.0;
            }
        }
    }
    pieces
}

fn pose_at(pieces: &[Piece], t: f64) -> (Rotation3<f64>, Vector3<f64>) {
    let idx = pieces.partition_point(|p| p.t0 <= t).saturating_sub(1);
    pieces[idx].pose(t)
}

/// Sample times `n / rate`, closed with the exact end time.
fn sample_times(spec: &TrajectorySpec) -> Vec<f64> {
    let total = spec.duration();
    let n = (total * spec.rate_hz + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 / spec.rate_hz).collect();
    if total - times[n] > 1e-9 {
        times.push(total);
    } else {
        times[n] = total;
    }
    times
}

/// Ground truth for every sample time of `spec`.
pub fn generate_truth(spec: &TrajectorySpec) -> Result<Vec<GroundTruthSample>> {
    spec.validate()?;
    let pieces = compile(spec);
    let gravity = Gravity::<f64>::default();
    let mut times = sample_times(spec);
    let n = times.len();
    // two extrapolated instants close the secant velocity and acceleration
    let dt_nom = 1.0 / spec.rate_hz;
    let last = times[n - 1];
    times.push(last + dt_nom);
    times.push(last + 2.0 * dt_nom);

    // attitude is taken mid-step: on constant-rate pieces the chord of the
    // path is then exactly along body x
    let positions: Vec<Vector3<f64>> = times.iter().map(|t| pose_at(&pieces, *t).1).collect();
    let rotations: Vec<Rotation3<f64>> = (0..n + 1)
        .map(|i| pose_at(&pieces, 0.5 * (times[i] + times[i + 1])).0)
        .collect();
    let velocity: Vec<Vector3<f64>> = (0..n + 1)
        .map(|i| (positions[i + 1] - positions[i]) / (times[i + 1] - times[i]))
        .collect();

    Ok((0..n)
        .map(|i| {
            let dt = times[i + 1] - times[i];
            let r = rotations[i];
            let omega = log_so3(&(r.inverse() * rotations[i + 1])) / dt;
            let accel = r.inverse() * ((velocity[i + 1] - velocity[i]) / dt - gravity.g);
            let next = (i + 1).min(n - 1);
            GroundTruthSample {
                timestamp: times[i],
                rotation: r,
                velocity_w: velocity[i],
                position_w: positions[i],
                omega_body: omega,
                accel_body: accel,
                flags: oracle_step_labels(
                    (&velocity[i], &r),
                    (&velocity[next], &rotations[next]),
                    &omega,
                ),
            }
        })
        .collect())
}

/// IMU error model: additive bias plus white noise, optional bias random
/// walk, and optional speed-proportional accelerometer vibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuCorruption {
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Per-sample white-noise standard deviation, rad/s.
    pub gyro_noise: f64,
    /// Per-sample white-noise standard deviation, m/s².
    pub accel_noise: f64,
    pub bias_walk: bool,
    /// Bias increment std per sample is `gyro_bias_walk · dt`.
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    /// Extra accelerometer noise std per m/s of speed.
    pub vibration: f64,
    pub seed: u64,
}

impl Default for ImuCorruption {
    fn default() -> Self {
        Self::none()
    }
}

impl ImuCorruption {
    pub fn none() -> Self {
        Self {
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            gyro_noise: 0.0,
            accel_noise: 0.0,
            bias_walk: false,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            vibration: 0.0,
            seed: 0,
        }
    }

    /// Noise levels matching the default filter tuning.
    pub fn nominal(seed: u64) -> Self {
        Self {
            gyro_noise: 0.01,
            accel_noise: 0.2,
            gyro_bias_walk: 0.001,
            accel_bias_walk: 0.02,
            seed,
            ..Self::none()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [
            self.gyro_noise,
            self.accel_noise,
            self.gyro_bias_walk,
            self.accel_bias_walk,
            self.vibration,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "IMU corruption parameters must be non-negative".into(),
            ))
        }
    }
}

/// Corrupted samples along with the true biases in effect at each sample.
pub fn corrupt_with_biases(
    truth: &[GroundTruthSample],
    c: &ImuCorruption,
) -> Result<(Vec<ImuSample<f64>>, Vec<(Vector3<f64>, Vector3<f64>)>)> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |rng: &mut ChaCha8Rng| Vector3::from_fn(|_, _| std_normal.sample(rng));

    let mut bg = Vector3::from(c.gyro_bias);
    let mut ba = Vector3::from(c.accel_bias);
    let mut samples = Vec::with_capacity(truth.len());
    let mut biases = Vec::with_capacity(truth.len());
    for (i, s) in truth.iter().enumerate() {
        let wg = gauss(&mut rng) * c.gyro_noise;
        let accel_std = c.accel_noise + c.vibration * s.velocity_w.norm();
        let wa = gauss(&mut rng) * accel_std;
        samples.push(ImuSample::new(
            s.timestamp,
            s.omega_body + bg + wg,
            s.accel_body + ba + wa,
        ));
        biases.push((bg, ba));
        if c.bias_walk {
            let dt = truth.get(i + 1).map_or(0.0, |n| n.timestamp - s.timestamp);
            bg += gauss(&mut rng) * (c.gyro_bias_walk * dt);
            ba += gauss(&mut rng) * (c.accel_bias_walk * dt);
        }
    }
    Ok((samples, biases))
}

pub fn corrupt(truth: &[GroundTruthSample], c: &ImuCorruption) -> Result<Vec<ImuSample<f64>>> {
    corrupt_with_biases(truth, c).map(|(s, _)| s)
}
