use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wheel_ins::detectors::{AMVD_GAMMA, AMVD_WINDOW};
use wheel_ins::evaluation::MetricsReport;
use wheel_ins::io;
use wheel_ins::pipeline::{self, DetectorChoice, RunConfig};
use wheel_ins::simulator::{corrupt, generate_truth, ImuCorruption, Segment, TrajectorySpec};

/// Inertial dead reckoning for wheeled vehicles with motion-profile
/// pseudo-measurements.
#[derive(Parser)]
#[command(name = "wheel-ins", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drive: imu.csv, gt.csv, flags.csv and spec.toml.
    Simulate(SimulateArgs),
    /// Run a motion-profile detector over an IMU log and write flags.
    Detect(DetectArgs),
    /// Run the filter on an IMU log with a precomputed flags file.
    Filter(FilterArgs),
    /// Compare an estimate against ground truth.
    Evaluate(EvaluateArgs),
    /// Detector, filter and evaluation in one go, driven by a config file.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    /// 60 s of stops, straights, turns and a ramp.
    Mixed,
    /// Random urban drive of `--duration` seconds.
    Drive,
    /// Standing still for `--duration` seconds.
    Stationary,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseLevel {
    None,
    Nominal,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Trajectory spec (TOML); overrides --scenario.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Scenario::Mixed)]
    scenario: Scenario,
    /// Duration for the drive and stationary scenarios, s.
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Keep the random drive moving after its opening stop.
    #[arg(long)]
    no_stops: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseLevel::Nominal)]
    noise: NoiseLevel,
    /// Constant gyro bias on every axis, rad/s.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    gyro_bias: f64,
    /// Constant accelerometer bias on every axis, m/s².
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    accel_bias: f64,
    /// Let the biases drift as a random walk.
    #[arg(long)]
    bias_walk: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Oracle,
    Amvd,
    Network,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    imu: PathBuf,
    #[arg(long, value_enum)]
    detector: DetectorKind,
    /// Weight file for the network detector.
    #[arg(long, required_if_eq("detector", "network"))]
    weights: Option<PathBuf>,
    /// Ground truth for the oracle detector.
    #[arg(long, required_if_eq("detector", "oracle"))]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = AMVD_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = AMVD_GAMMA)]
    gamma: f64,
    /// Output flags file.
    #[arg(long)]
    out: PathBuf,
}

/// Overrides applied on top of an optional config file.
#[derive(Args)]
struct RunOverrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    imu: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initialization stop length, s.
    #[arg(long)]
    init_stop: Option<f64>,
    /// Disable the lateral and vertical pseudo-measurements.
    #[arg(long)]
    no_lateral_vertical: bool,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    run: RunOverrides,
    /// Flags file from `detect` or `simulate`.
    #[arg(long)]
    flags: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    run: RunOverrides,
    #[arg(long, value_enum)]
    detector: Option<DetectorKind>,
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimate (or any pose CSV) to score.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Directory for metrics.txt and metrics.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.scenario) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<TrajectorySpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Scenario::Mixed) => TrajectorySpec::mixed_60s(),
        (None, Scenario::Drive) => {
            TrajectorySpec::random_drive(a.duration, 2.0, !a.no_stops, a.seed)
        }
        (None, Scenario::Stationary) => TrajectorySpec::new(vec![Segment::Stop {
            duration: a.duration,
        }]),
    };
    spec.seed = a.seed;
    let base = match a.noise {
        NoiseLevel::None => ImuCorruption::none(),
        NoiseLevel::Nominal => ImuCorruption::nominal(a.seed),
    };
    let corruption = ImuCorruption {
        gyro_bias: [a.gyro_bias; 3],
        accel_bias: [a.accel_bias; 3],
        bias_walk: a.bias_walk,
        seed: a.seed,
        ..base
    };
    let truth = generate_truth(&spec)?;
    let imu = corrupt(&truth, &corruption)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    io::write_imu_csv(&a.out.join("imu.csv"), &imu)?;
    io::write_ground_truth_csv(&a.out.join("gt.csv"), &truth)?;
    let times: Vec<f64> = truth.iter().map(|s| s.timestamp).collect();
    let flags: Vec<_> = truth.iter().map(|s| s.flags).collect();
    io::write_flags_csv(&a.out.join("flags.csv"), &times, &flags)?;
    std::fs::write(a.out.join("spec.toml"), toml::to_string(&spec)?)?;
    println!(
        "wrote {} samples ({:.1} s) to {}",
        truth.len(),
        spec.duration(),
        a.out.display()
    );
    Ok(())
}

fn detector_choice(
    kind: DetectorKind,
    weights: Option<&Path>,
    window: usize,
    gamma: f64,
) -> Result<DetectorChoice> {
    Ok(match kind {
        DetectorKind::Oracle => DetectorChoice::Oracle,
        DetectorKind::Amvd => DetectorChoice::Amvd { window, gamma },
        DetectorKind::Network => match weights {
            Some(p) => DetectorChoice::Network {
                path: p.to_path_buf(),
            },
            None => bail!("the network detector needs --weights"),
        },
    })
}

fn detect(a: &DetectArgs) -> Result<()> {
    let imu = io::read_imu_csv(&a.imu)?;
    let truth = a.gt.as_deref().map(io::read_ground_truth_csv).transpose()?;
    let choice = detector_choice(a.detector, a.weights.as_deref(), a.window, a.gamma)?;
    let flags = pipeline::detect_flags(&choice, &imu, truth.as_ref())?;
    let times: Vec<f64> = imu.iter().map(|s| s.timestamp).collect();
    io::write_flags_csv(&a.out, &times, &flags)?;
    let stops = flags.iter().filter(|f| f.vel).count();
    println!("{} samples, {stops} flagged stationary", flags.len());
    Ok(())
}

fn build_config(o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let (Some(imu), Some(out)) = (&o.imu, &o.out) else {
                bail!("without --config both --imu and --out are required");
            };
            RunConfig::new(imu, out)
        }
    };
    if let Some(p) = &o.imu {
        cfg.imu = p.clone();
    }
    if let Some(p) = &o.gt {
        cfg.ground_truth = Some(p.clone());
    }
    if let Some(p) = &o.out {
        cfg.output_dir = p.clone();
    }
    if let Some(t) = o.init_stop {
        cfg.init_stop = t;
    }
    if o.no_lateral_vertical {
        cfg.lateral_vertical = false;
    }
    Ok(cfg)
}

fn report_run(cfg: &RunConfig, report: Option<&MetricsReport>) {
    println!("outputs in {}", cfg.output_dir.display());
    if let Some(r) = report {
        print!("{}", r.to_key_value());
    }
}

fn filter(a: &FilterArgs) -> Result<()> {
    let mut cfg = build_config(&a.run)?;
    cfg.detector = DetectorChoice::Flags {
        path: a.flags.clone(),
    };
    let result = pipeline::run_pipeline(&cfg)?;
    report_run(&cfg, result.report.as_ref());
    Ok(())
}

fn run(a: &PipelineArgs) -> Result<()> {
    let mut cfg = build_config(&a.run)?;
    if let Some(kind) = a.detector {
        let (window, gamma) = match cfg.detector {
            DetectorChoice::Amvd { window, gamma } => (window, gamma),
            _ => (AMVD_WINDOW, AMVD_GAMMA),
        };
        cfg.detector = detector_choice(kind, a.weights.as_deref(), window, gamma)?;
    } else if let (Some(w), DetectorChoice::Network { path }) = (&a.weights, &mut cfg.detector) {
        *path = w.clone();
    }
    let result = pipeline::run_pipeline(&cfg)?;
    report_run(&cfg, result.report.as_ref());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let est = io::read_trajectory_csv(&a.estimate)?;
    let gt = io::read_ground_truth_csv(&a.gt)?;
    let report = MetricsReport::compute(&est, &gt.record)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        pipeline::write_report(dir, &report)?;
    }
    print!("{}", report.to_key_value());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Filter(a) => filter(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => run(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
