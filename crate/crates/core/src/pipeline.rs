//! End-to-end driver: IMU log → motion flags → filter → metrics.
//!
//! The detector only ever sees the raw IMU stream (or, for the oracle,
//! the ground truth); filter output never feeds back into it.
//! [`execute`] does all work in memory, so a failing run leaves no files
//! behind; [`run_pipeline`] writes artifacts only after it succeeds.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::detectors::{
    AmvdDetector, DetectorWeights, MotionDetector, MotionFlags, NetworkDetector, AMVD_GAMMA,
    AMVD_WINDOW,
};
use crate::error::{Error, Result};
use crate::evaluation::{MetricsReport, TrajectoryPoint, TrajectoryRecord};
use crate::iekf::{
    initialize_stationary, step, FilterParams, FilterState, InitialCovariance, MeasurementNoise,
    ProcessNoise,
};
use crate::io::{self, GroundTruthLog};
use crate::state::{
    correct_measurement, propagate_nav, Gravity, ImuSample, NavState, STANDARD_GRAVITY,
};

/// Timestamps must agree to this when pairing flags with IMU samples.
const TIME_MATCH: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorChoice {
    /// Thresholded ground truth; needs a ground-truth file with velocity and
    /// angular-rate columns on the IMU timestamps.
    #[default]
    Oracle,
    /// Accelerometer moving-variance test; drives the zero-velocity flag only.
    Amvd {
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Recurrent detector loaded from a weight file.
    Network { path: PathBuf },
    /// Precomputed flags file.
    Flags { path: PathBuf },
}

fn default_window() -> usize {
    AMVD_WINDOW
}

fn default_gamma() -> f64 {
    AMVD_GAMMA
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -STANDARD_GRAVITY]
}

fn default_init_stop() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub imu: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub detector: DetectorChoice,
    #[serde(default)]
    pub process: ProcessNoise<f64>,
    #[serde(default)]
    pub measurement: MeasurementNoise<f64>,
    #[serde(default)]
    pub initial_covariance: InitialCovariance<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Length of the leading stop used for initialization, s.
    #[serde(default = "default_init_stop")]
    pub init_stop: f64,
    /// Use the lateral and vertical zero-velocity pseudo-measurements.
    #[serde(default = "yes")]
    pub lateral_vertical: bool,
    /// Take the initial position and heading from the first ground-truth
    /// pose when one is available.
    #[serde(default = "yes")]
    pub align_start: bool,
    /// Recorded with the outputs; the pipeline itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(imu: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            imu: imu.into(),
            ground_truth: None,
            output_dir: output_dir.into(),
            detector: DetectorChoice::default(),
            process: ProcessNoise::default(),
            measurement: MeasurementNoise::default(),
            initial_covariance: InitialCovariance::default(),
            gravity: default_gravity(),
            init_stop: default_init_stop(),
            lateral_vertical: true,
            align_start: true,
            seed: 0,
        }
    }

    /// Parses a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.imu);
        fix(&mut self.output_dir);
        if let Some(p) = self.ground_truth.as_mut() {
            fix(p);
        }
        if let DetectorChoice::Network { path } | DetectorChoice::Flags { path } =
            &mut self.detector
        {
            fix(path);
        }
    }

    pub fn params(&self) -> Result<FilterParams<f64>> {
        Ok(FilterParams {
            process: self.process,
            measurement: self.measurement,
            gravity: Gravity::new(Vector3::from(self.gravity))?,
        })
    }

    /// Checks parameters and that every input exists.
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.measurement.validate()?;
        self.initial_covariance.validate()?;
        self.params()?;
        if !(self.init_stop > 0.0 && self.init_stop.is_finite()) {
            return Err(Error::Config(format!(
                "init_stop {} must be positive",
                self.init_stop
            )));
        }
        let mut inputs = vec![&self.imu];
        inputs.extend(self.ground_truth.as_ref());
        match &self.detector {
            DetectorChoice::Network { path } | DetectorChoice::Flags { path } => inputs.push(path),
            DetectorChoice::Amvd { window, gamma } => {
                if *window < 2 || !(*gamma > 0.0) {
                    return Err(Error::Config("amvd needs window ≥ 2 and gamma > 0".into()));
                }
            }
            DetectorChoice::Oracle => {
                if self.ground_truth.is_none() {
                    return Err(Error::Config(
                        "oracle detector needs a ground-truth file".into(),
                    ));
                }
            }
        }
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Filter states on the IMU timestamps.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub timestamps: Vec<f64>,
    pub states: Vec<FilterState<f64>>,
}

impl FilterRun {
    pub fn record(&self) -> Result<TrajectoryRecord> {
        TrajectoryRecord::new(
            self.timestamps
                .iter()
                .zip(&self.states)
                .map(|(t, s)| TrajectoryPoint {
                    timestamp: *t,
                    position: s.nav.position,
                    rotation: s.nav.rotation,
                })
                .collect(),
        )
    }
}

/// The samples inside the leading `init_stop` seconds.
pub fn leading_stop(imu: &[ImuSample<f64>], init_stop: f64) -> &[ImuSample<f64>] {
    let Some(first) = imu.first() else { return imu };
    let end = imu.partition_point(|s| s.timestamp < first.timestamp + init_stop);
    &imu[..end]
}

/// Stationary initialization from the leading stop.
pub fn initialize(
    imu: &[ImuSample<f64>],
    init_stop: f64,
    gravity: &Gravity<f64>,
    p0: &InitialCovariance<f64>,
) -> Result<FilterState<f64>> {
    initialize_stationary(leading_stop(imu, init_stop), gravity, p0)
}

/// Moves the initial estimate onto a known starting pose, keeping the
/// self-estimated roll and pitch.
pub fn place_at(fs: &mut FilterState<f64>, start: &TrajectoryPoint) {
    let yaw = start.rotation.euler_angles().2;
    let current = fs.nav.rotation.euler_angles().2;
    fs.nav.rotation =
        Rotation3::from_axis_angle(&Vector3::z_axis(), yaw - current) * fs.nav.rotation;
    fs.nav.position = start.position;
}

/// Runs the filter over the whole log. `flags[n]` conditions the step from
/// sample `n` to `n + 1`; the returned states line up with the samples.
pub fn run_filter(
    imu: &[ImuSample<f64>],
    flags: &[MotionFlags],
    params: &FilterParams<f64>,
    initial: FilterState<f64>,
) -> Result<FilterRun> {
    if flags.len() != imu.len() {
        return Err(Error::LengthMismatch {
            predicted: flags.len(),
            truth: imu.len(),
        });
    }
    let mut states = Vec::with_capacity(imu.len());
    let mut fs = initial;
    states.push(fs);
    for (n, w) in imu.windows(2).enumerate() {
        fs = step(
            &fs,
            &w[0],
            flags[n],
            params,
            w[1].timestamp - w[0].timestamp,
        )?;
        states.push(fs);
    }
    Ok(FilterRun {
        timestamps: imu.iter().map(|s| s.timestamp).collect(),
        states,
    })
}

/// Pure inertial integration with fixed bias estimates.
pub fn dead_reckon(
    imu: &[ImuSample<f64>],
    initial: &NavState<f64>,
    gravity: &Gravity<f64>,
) -> Result<Vec<NavState<f64>>> {
    let mut out = Vec::with_capacity(imu.len());
    let mut s = *initial;
    out.push(s);
    for w in imu.windows(2) {
        let (omega, accel) = correct_measurement(&w[0], &s);
        s = propagate_nav(&s, &omega, &accel, w[1].timestamp - w[0].timestamp, gravity)?;
        out.push(s);
    }
    Ok(out)
}

fn check_times(
    imu: &[ImuSample<f64>],
    times: impl ExactSizeIterator<Item = f64>,
    what: &str,
) -> Result<()> {
    if times.len() != imu.len() {
        return Err(Error::Config(format!(
            "{what} has {} rows, IMU has {}",
            times.len(),
            imu.len()
        )));
    }
    for (n, (s, t)) in imu.iter().zip(times).enumerate() {
        if (s.timestamp - t).abs() > TIME_MATCH {
            return Err(Error::Config(format!(
                "{what} timestamp {t} at index {n} does not match IMU {}",
                s.timestamp
            )));
        }
    }
    Ok(())
}

/// Flags for every IMU sample from the chosen detector.
pub fn detect_flags(
    choice: &DetectorChoice,
    imu: &[ImuSample<f64>],
    truth: Option<&GroundTruthLog>,
) -> Result<Vec<MotionFlags>> {
    match choice {
        DetectorChoice::Oracle => {
            let log =
                truth.ok_or_else(|| Error::Config("oracle detector needs ground truth".into()))?;
            let flags = log.oracle_flags().ok_or_else(|| {
                Error::Config("ground truth lacks velocity or angular-rate columns".into())
            })?;
            check_times(
                imu,
                log.record.points().iter().map(|p| p.timestamp),
                "ground truth",
            )?;
            Ok(flags)
        }
        DetectorChoice::Amvd { window, gamma } => {
            Ok(AmvdDetector::new(*window, *gamma).detect_all(imu))
        }
        DetectorChoice::Network { path } => {
            let weights = Arc::new(DetectorWeights::load(path)?);
            Ok(NetworkDetector::new(weights).detect_all(imu))
        }
        DetectorChoice::Flags { path } => {
            let rows = io::read_flags_csv(path)?;
            check_times(imu, rows.iter().map(|(t, _)| *t), "flags file")?;
            Ok(rows.into_iter().map(|(_, f)| f).collect())
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub flags: Vec<MotionFlags>,
    pub run: FilterRun,
    pub report: Option<MetricsReport>,
}

/// Runs the whole pipeline without touching the file system for output.
pub fn execute(cfg: &RunConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let params = cfg.params()?;
    let imu = io::read_imu_csv(&cfg.imu)?;
    let truth = cfg
        .ground_truth
        .as_deref()
        .map(io::read_ground_truth_csv)
        .transpose()?;
    let mut flags = detect_flags(&cfg.detector, &imu, truth.as_ref())?;
    if !cfg.lateral_vertical {
        flags
            .iter_mut()
            .for_each(|f| *f = f.without_lateral_vertical());
    }

    let mut initial = initialize(
        &imu,
        cfg.init_stop,
        &params.gravity,
        &cfg.initial_covariance,
    )?;
    if let (true, Some(first)) = (
        cfg.align_start,
        truth.as_ref().and_then(|t| t.record.points().first()),
    ) {
        place_at(&mut initial, first);
    }
    let run = run_filter(&imu, &flags, &params, initial)?;
    let report = match &truth {
        Some(t) => Some(MetricsReport::compute(&run.record()?, &t.record)?),
        None => None,
    };
    Ok(PipelineResult { flags, run, report })
}

pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const FLAGS_FILE: &str = "flags.csv";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const METRICS_JSON_FILE: &str = "metrics.json";

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    let text = dir.join(METRICS_TEXT_FILE);
    std::fs::write(&text, report.to_key_value()).map_err(|e| Error::io(&text, e))?;
    let json = dir.join(METRICS_JSON_FILE);
    let body = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))
}

/// [`execute`] followed by writing the estimate, flags and metrics into
/// the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineResult> {
    let result = execute(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_estimate_csv(
        &dir.join(ESTIMATE_FILE),
        &result.run.timestamps,
        &result.run.states,
    )?;
    io::write_flags_csv(&dir.join(FLAGS_FILE), &result.run.timestamps, &result.flags)?;
    if let Some(report) = &result.report {
        write_report(dir, report)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{corrupt, generate_truth, ImuCorruption, Segment, TrajectorySpec};

    fn scenario(dir: &Path, spec: &TrajectorySpec, c: &ImuCorruption) -> RunConfig {
        let truth = generate_truth(spec).unwrap();
        let imu = corrupt(&truth, c).unwrap();
        io::write_imu_csv(&dir.join("imu.csv"), &imu).unwrap();
        io::write_ground_truth_csv(&dir.join("gt.csv"), &truth).unwrap();
        let mut cfg = RunConfig::new(dir.join("imu.csv"), dir.join("out"));
        cfg.ground_truth = Some(dir.join("gt.csv"));
        cfg
    }

    #[test]
    fn stop_only_holds_position() {
        let dir = tempfile::tempdir().unwrap();
        let spec = TrajectorySpec::new(vec![Segment::Stop { duration: 20.0 }]);
        let cfg = scenario(dir.path(), &spec, &ImuCorruption::nominal(5));
        let r = run_pipeline(&cfg).unwrap();
        assert!(r.report.unwrap().final_distance < 0.1);
        for f in [
            ESTIMATE_FILE,
            FLAGS_FILE,
            METRICS_TEXT_FILE,
            METRICS_JSON_FILE,
        ] {
            assert!(cfg.output_dir.join(f).is_file(), "{f}");
        }
    }

    #[test]
    fn zero_noise_drive_closes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = scenario(
            dir.path(),
            &TrajectorySpec::mixed_60s(),
            &ImuCorruption::none(),
        );
        let r = execute(&cfg).unwrap();
        let d = r.report.unwrap().final_distance;
        assert!(d < 1e-3, "final distance {d}");
    }

    #[test]
    fn missing_weights_leave_no_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = scenario(
            dir.path(),
            &TrajectorySpec::mixed_60s(),
            &ImuCorruption::none(),
        );
        cfg.detector = DetectorChoice::Network {
            path: dir.path().join("absent.bin"),
        };
        assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
        assert!(!cfg.output_dir.exists());
    }

    #[test]
    fn amvd_flags_only_zero_velocity() {
        let dir = tempfile::tempdir().unwrap();
        let c = ImuCorruption {
            accel_noise: 0.01,
            gyro_noise: 0.001,
            ..ImuCorruption::none()
        };
        let mut cfg = scenario(dir.path(), &TrajectorySpec::mixed_60s(), &c);
        cfg.detector = DetectorChoice::Amvd {
            window: AMVD_WINDOW,
            gamma: AMVD_GAMMA,
        };
        let r = execute(&cfg).unwrap();
        assert!(r.flags.iter().all(|f| !f.ang && !f.lat && !f.up));
        assert!(r.flags.iter().any(|f| f.vel));
    }

    #[test]
    fn detector_sees_only_raw_imu() {
        let dir = tempfile::tempdir().unwrap();
        let c = ImuCorruption {
            accel_noise: 0.01,
            ..ImuCorruption::none()
        };
        let mut cfg = scenario(dir.path(), &TrajectorySpec::mixed_60s(), &c);
        cfg.detector = DetectorChoice::Amvd {
            window: AMVD_WINDOW,
            gamma: AMVD_GAMMA,
        };
        let in_pipeline = execute(&cfg).unwrap().flags;
        let imu = io::read_imu_csv(&cfg.imu).unwrap();
        let standalone = AmvdDetector::new(AMVD_WINDOW, AMVD_GAMMA).detect_all(&imu);
        assert_eq!(in_pipeline, standalone);
    }

    #[test]
    fn reruns_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = scenario(
            dir.path(),
            &TrajectorySpec::mixed_60s(),
            &ImuCorruption::nominal(2),
        );
        run_pipeline(&cfg).unwrap();
        let first = std::fs::read(cfg.output_dir.join(ESTIMATE_FILE)).unwrap();
        run_pipeline(&cfg).unwrap();
        assert_eq!(
            first,
            std::fs::read(cfg.output_dir.join(ESTIMATE_FILE)).unwrap()
        );
    }

    #[test]
    fn config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "imu = \"imu.csv\"\noutput_dir = \"out\"\ninit_stop = 2.0\n[detector]\nkind = \"amvd\"\ngamma = 0.002\n[process]\ngyro = 0.02\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.imu, dir.path().join("imu.csv"));
        assert_eq!(
            cfg.detector,
            DetectorChoice::Amvd {
                window: AMVD_WINDOW,
                gamma: 0.002
            }
        );
        assert_eq!(cfg.process.gyro, 0.02);
        assert_eq!(cfg.process.accel, ProcessNoise::<f64>::default().accel);
        assert_eq!(cfg.init_stop, 2.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        std::fs::write(&path, "imu = \"a\"\noutput_dir = \"b\"\nbogus = 1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn oracle_requires_truth() {
        let mut cfg = RunConfig::new("imu.csv", "out");
        cfg.detector = DetectorChoice::Oracle;
        assert!(cfg.validate().is_err());
    }
}
