//! CSV formats.
//!
//! Every file starts with a `# wheel-ins <kind> v1` comment line followed by
//! a header row; columns are located by name so extra columns are ignored.
//! Floats are written in shortest round-trip form, so write → read is
//! bit-exact.
//!
//! | kind | required columns | optional |
//! |------|------------------|----------|
//! | imu | `t wx wy wz ax ay az` | |
//! | ground-truth | `t px py pz r00 r01 r02 r10 r11 r12 r20 r21 r22` | `vx vy vz wx wy wz ax ay az` |
//! | flags | `t z_vel z_ang z_lat z_up` | |
//! | estimate | ground-truth columns plus `bgx bgy bgz bax bay baz cov_trace` | |
//!
//! Rotations are body-to-world, row-major.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::detectors::{oracle_step_labels, MotionFlags};
use crate::error::{Error, Result};
use crate::evaluation::{TrajectoryPoint, TrajectoryRecord};
use crate::iekf::FilterState;
use crate::lie::{orthonormalize, rotation_defect};
use crate::simulator::GroundTruthSample;
use crate::state::ImuSample;

pub const FORMAT_VERSION: u32 = 1;

/// Rotation deviation above which the loader warns before projecting.
pub const ROTATION_WARN_THRESHOLD: f64 = 1e-6;

const IMU_COLUMNS: [&str; 7] = ["t", "wx", "wy", "wz", "ax", "ay", "az"];
const POSE_COLUMNS: [&str; 13] = [
    "t", "px", "py", "pz", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
];
const TRUTH_EXTRA: [&str; 9] = ["vx", "vy", "vz", "wx", "wy", "wz", "ax", "ay", "az"];
const FLAG_COLUMNS: [&str; 5] = ["t", "z_vel", "z_ang", "z_lat", "z_up"];
const ESTIMATE_EXTRA: [&str; 10] = [
    "vx",
    "vy",
    "vz",
    "bgx",
    "bgy",
    "bgz",
    "bax",
    "bay",
    "baz",
    "cov_trace",
];

/// Parsed numeric table: the column index of each requested name (or
/// `None` for missing optional ones) and rows tagged with their file line.
struct Table {
    columns: Vec<Option<usize>>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl Table {
    fn get(&self, row: &[f64], col: usize) -> Option<f64> {
        self.columns[col].map(|c| row[c])
    }
}

fn check_version(path: &Path, text: &str, kind: &str) -> Result<()> {
    let Some(first) = text.lines().next() else {
        return Ok(());
    };
    let Some(comment) = first.strip_prefix('#') else {
        return Ok(());
    };
    let mut words = comment.split_whitespace();
    if words.next() != Some("wheel-ins") {
        return Ok(());
    }
    let found_kind = words.next().unwrap_or("");
    let version = words.next().unwrap_or("");
    if found_kind != kind {
        return Err(Error::csv(
            path,
            1,
            format!("expected a {kind} file, header says {found_kind}"),
        ));
    }
    if version != format!("v{FORMAT_VERSION}") {
        return Err(Error::csv(
            path,
            1,
            format!("unsupported format version {version}"),
        ));
    }
    Ok(())
}

fn read_table(path: &Path, kind: &str, required: &[&str], optional: &[&str]) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    check_version(path, &text, kind)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::csv(path, 0, e.to_string()))?
        .clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut columns = Vec::with_capacity(required.len() + optional.len());
    for name in required {
        columns.push(Some(find(name).ok_or_else(|| {
            Error::csv(path, 0, format!("missing column `{name}`"))
        })?));
    }
    columns.extend(optional.iter().map(|n| find(n)));

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::csv(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut values = vec![f64::NAN; header.len()];
        for c in columns.iter().flatten() {
            let field = record
                .get(*c)
                .ok_or_else(|| Error::csv(path, line, "too few fields"))?;
            values[*c] = field.parse::<f64>().map_err(|_| {
                Error::csv(
                    path,
                    line,
                    format!("cannot parse `{field}` in column `{}`", &header[*c]),
                )
            })?;
            if !values[*c].is_finite() {
                return Err(Error::csv(
                    path,
                    line,
                    format!("non-finite value in column `{}`", &header[*c]),
                ));
            }
        }
        rows.push((line, values));
    }
    let t = columns[0].expect("time column is required");
    for w in rows.windows(2) {
        if !(w[1].1[t] > w[0].1[t]) {
            return Err(Error::csv(
                path,
                w[1].0,
                "timestamps must be strictly increasing",
            ));
        }
    }
    Ok(Table { columns, rows })
}

fn open(path: &Path, kind: &str, columns: &[&str]) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# wheel-ins {kind} v{FORMAT_VERSION}").map_err(|e| Error::io(path, e))?;
    writeln!(w, "{}", columns.join(",")).map_err(|e| Error::io(path, e))?;
    Ok(w)
}

fn write_row(w: &mut impl Write, path: &Path, values: &[f64]) -> Result<()> {
    let line: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))
}

fn vec3(t: &Table, row: &[f64], first: usize) -> Option<Vector3<f64>> {
    Some(Vector3::new(
        t.get(row, first)?,
        t.get(row, first + 1)?,
        t.get(row, first + 2)?,
    ))
}

fn rotation_values(r: &Rotation3<f64>) -> [f64; 9] {
    let m = r.matrix();
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample<f64>>> {
    let t = read_table(path, "imu", &IMU_COLUMNS, &[])?;
    Ok(t.rows
        .iter()
        .map(|(_, r)| {
            let g = |i| t.get(r, i).expect("required");
            ImuSample::new(
                g(0),
                Vector3::new(g(1), g(2), g(3)),
                Vector3::new(g(4), g(5), g(6)),
            )
        })
        .collect())
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample<f64>]) -> Result<()> {
    let mut w = open(path, "imu", &IMU_COLUMNS)?;
    for s in samples {
        let row = [
            s.timestamp,
            s.gyro.x,
            s.gyro.y,
            s.gyro.z,
            s.accel.x,
            s.accel.y,
            s.accel.z,
        ];
        write_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ground-truth poses with the optional kinematic channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthLog {
    pub record: TrajectoryRecord,
    /// World-frame velocity, when the file has `vx vy vz`.
    pub velocity: Option<Vec<Vector3<f64>>>,
    /// Body angular rate, when the file has `wx wy wz`.
    pub omega: Option<Vec<Vector3<f64>>>,
    /// File lines whose rotation deviated from orthonormal by more than
    /// [`ROTATION_WARN_THRESHOLD`] and were projected.
    pub projected_rows: Vec<usize>,
}

impl GroundTruthLog {
    /// Oracle step labels, available when velocity and angular rate are
    /// present. The last sample is paired with itself.
    pub fn oracle_flags(&self) -> Option<Vec<MotionFlags>> {
        let (v, w) = (self.velocity.as_ref()?, self.omega.as_ref()?);
        let pts = self.record.points();
        Some(
            (0..pts.len())
                .map(|n| {
                    let m = (n + 1).min(pts.len() - 1);
                    oracle_step_labels((&v[n], &pts[n].rotation), (&v[m], &pts[m].rotation), &w[n])
                })
                .collect(),
        )
    }
}

fn read_poses(
    path: &Path,
    kind: &str,
    optional: &[&str],
) -> Result<(Table, Vec<TrajectoryPoint>, Vec<usize>)> {
    let t = read_table(path, kind, &POSE_COLUMNS, optional)?;
    let mut projected = Vec::new();
    let mut points = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let g = |i| t.get(r, i).expect("required");
        let m = Matrix3::from_fn(|i, j| g(4 + 3 * i + j));
        let (ortho, det) = rotation_defect(&m);
        let rotation = if ortho.max(det) > ROTATION_WARN_THRESHOLD {
            log::warn!(
                "{}:{line}: rotation deviates from SO(3) by {:.3e}; projecting",
                path.display(),
                ortho.max(det)
            );
            projected.push(*line);
            orthonormalize(&m)
        } else {
            Rotation3::from_matrix_unchecked(m)
        };
        points.push(TrajectoryPoint {
            timestamp: g(0),
            position: Vector3::new(g(1), g(2), g(3)),
            rotation,
        });
    }
    Ok((t, points, projected))
}

pub fn read_ground_truth_csv(path: &Path) -> Result<GroundTruthLog> {
    let (t, points, projected_rows) = read_poses(path, "ground-truth", &TRUTH_EXTRA)?;
    let base = POSE_COLUMNS.len();
    let channel = |first: usize| -> Option<Vec<Vector3<f64>>> {
        t.rows
            .iter()
            .map(|(_, r)| vec3(&t, r, base + first))
            .collect()
    };
    Ok(GroundTruthLog {
        velocity: channel(0),
        omega: channel(3),
        record: TrajectoryRecord::new(points)?,
        projected_rows,
    })
}

pub fn write_ground_truth_csv(path: &Path, truth: &[GroundTruthSample]) -> Result<()> {
    let columns: Vec<&str> = POSE_COLUMNS.iter().chain(&TRUTH_EXTRA).copied().collect();
    let mut w = open(path, "ground-truth", &columns)?;
    for s in truth {
        let mut row = vec![s.timestamp, s.position_w.x, s.position_w.y, s.position_w.z];
        row.extend(rotation_values(&s.rotation));
        row.extend(
            s.velocity_w
                .iter()
                .chain(&s.omega_body)
                .chain(&s.accel_body),
        );
        write_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Timestamped motion flags.
pub fn read_flags_csv(path: &Path) -> Result<Vec<(f64, MotionFlags)>> {
    let t = read_table(path, "flags", &FLAG_COLUMNS, &[])?;
    t.rows
        .iter()
        .map(|(line, r)| {
            let mut bits = [false; 4];
            for (k, b) in bits.iter_mut().enumerate() {
                let v = t.get(r, k + 1).expect("required");
                *b = match v {
                    0.0 => false,
                    1.0 => true,
                    _ => {
                        return Err(Error::csv(
                            path,
                            *line,
                            format!("flag value {v} is not 0 or 1"),
                        ))
                    }
                };
            }
            Ok((
                t.get(r, 0).expect("required"),
                MotionFlags::from_array(bits),
            ))
        })
        .collect()
}

pub fn write_flags_csv(path: &Path, timestamps: &[f64], flags: &[MotionFlags]) -> Result<()> {
    if timestamps.len() != flags.len() {
        return Err(Error::LengthMismatch {
            predicted: flags.len(),
            truth: timestamps.len(),
        });
    }
    let mut w = open(path, "flags", &FLAG_COLUMNS)?;
    for (t, f) in timestamps.iter().zip(flags) {
        let bit = |b: bool| if b { "1" } else { "0" };
        writeln!(
            w,
            "{t},{},{},{},{}",
            bit(f.vel),
            bit(f.ang),
            bit(f.lat),
            bit(f.up)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Filter output, one row per state.
pub fn write_estimate_csv(
    path: &Path,
    timestamps: &[f64],
    states: &[FilterState<f64>],
) -> Result<()> {
    if timestamps.len() != states.len() {
        return Err(Error::LengthMismatch {
            predicted: states.len(),
            truth: timestamps.len(),
        });
    }
    let columns: Vec<&str> = POSE_COLUMNS
        .iter()
        .chain(&ESTIMATE_EXTRA)
        .copied()
        .collect();
    let mut w = open(path, "estimate", &columns)?;
    for (t, s) in timestamps.iter().zip(states) {
        let n = &s.nav;
        let mut row = vec![*t, n.position.x, n.position.y, n.position.z];
        row.extend(rotation_values(&n.rotation));
        row.extend(n.velocity.iter().chain(&n.gyro_bias).chain(&n.accel_bias));
        row.push(s.cov.trace());
        write_row(&mut w, path, &row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the pose columns of an estimate or ground-truth file.
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kind = if text.starts_with("# wheel-ins estimate") {
        "estimate"
    } else {
        "ground-truth"
    };
    let (_, points, _) = read_poses(path, kind, &[])?;
    TrajectoryRecord::new(points)
}
