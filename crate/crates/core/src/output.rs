//! Trajectory, diagnostics and summary files.
//!
//! Trajectory CSV: a `# smoothed=true|false` line, a header line, then one
//! row per IMU sample with the columns of [`TRAJECTORY_COLUMNS`]. `*_3s`
//! columns are three standard deviations. Floats use the shortest
//! representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::state::{AugValue, GaussianBelief, ACC_BIAS, ACC_SCALE, GYRO_BIAS};
use crate::stationarity::StationarityVerdict;
use crate::updates::{UpdateKind, UpdateReport};

pub const TRAJECTORY_COLUMNS: [&str; 27] = [
    "t",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "qw",
    "qx",
    "qy",
    "qz",
    "bax",
    "bay",
    "baz",
    "bwx",
    "bwy",
    "bwz",
    "sx",
    "sy",
    "sz",
    "x_3s",
    "y_3s",
    "z_3s",
    "vx_3s",
    "vy_3s",
    "vz_3s",
    "stationary",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub accel_scale: Vec3,
    pub position_3s: Vec3,
    pub velocity_3s: Vec3,
    pub stationary: bool,
}

impl TrajectoryRow {
    pub fn from_belief(b: &GaussianBelief, stationary: bool) -> Self {
        Self {
            t: b.t,
            position: b.mean.position,
            velocity: b.mean.velocity,
            attitude: b.mean.attitude,
            accel_bias: b.mean.accel_bias,
            gyro_bias: b.mean.gyro_bias,
            accel_scale: b.mean.accel_scale,
            position_3s: b.position_std() * 3.0,
            velocity_3s: b.velocity_std() * 3.0,
            stationary,
        }
    }

    fn values(&self) -> [f64; 26] {
        let (p, v, q) = (self.position, self.velocity, self.attitude);
        let (ba, bw, s) = (self.accel_bias, self.gyro_bias, self.accel_scale);
        let (ps, vs) = (self.position_3s, self.velocity_3s);
        [
            self.t, p.x, p.y, p.z, v.x, v.y, v.z, q.w, q.x, q.y, q.z, ba.x, ba.y, ba.z, bw.x, bw.y, bw.z, s.x, s.y,
            s.z, ps.x, ps.y, ps.z, vs.x, vs.y, vs.z,
        ]
    }
}

/// Posterior standard deviations of the calibration states.
pub fn calibration_std(b: &GaussianBelief) -> [Vec3; 3] {
    let std = |offset: usize| {
        Vec3::new(
            b.cov[(offset, offset)].sqrt(),
            b.cov[(offset + 1, offset + 1)].sqrt(),
            b.cov[(offset + 2, offset + 2)].sqrt(),
        )
    };
    [std(ACC_BIAS), std(GYRO_BIAS), std(ACC_SCALE)]
}

pub fn format_trajectory(rows: &[TrajectoryRow], smoothed: bool) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 400);
    let _ = writeln!(out, "# smoothed={smoothed}");
    out.push_str(&TRAJECTORY_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        for v in row.values() {
            let _ = write!(out, "{v},");
        }
        out.push_str(if row.stationary { "1\n" } else { "0\n" });
    }
    out
}

/// Parses a trajectory file; returns the rows and the `smoothed` flag.
pub fn parse_trajectory(text: &str) -> Result<(Vec<TrajectoryRow>, bool)> {
    let mut lines = text.lines().enumerate();
    let smoothed = match lines.next() {
        Some((_, "# smoothed=true")) => true,
        Some((_, "# smoothed=false")) => false,
        _ => return Err(Error::Parse { line: 1, reason: "expected '# smoothed=true|false'".into() }),
    };
    match lines.next() {
        Some((_, header)) if header == TRAJECTORY_COLUMNS.join(",") => {}
        _ => return Err(Error::Parse { line: 2, reason: "unexpected trajectory header".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != TRAJECTORY_COLUMNS.len() {
            return Err(err(format!("expected {} columns, found {}", TRAJECTORY_COLUMNS.len(), fields.len())));
        }
        let mut v = [0.0; 26];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[k].trim().parse().map_err(|_| err(format!("invalid number '{}'", fields[k])))?;
        }
        let stationary = match fields[26].trim() {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("invalid stationary flag '{other}'"))),
        };
        let v3 = |k: usize| Vec3::new(v[k], v[k + 1], v[k + 2]);
        rows.push(TrajectoryRow {
            t: v[0],
            position: v3(1),
            velocity: v3(4),
            attitude: Quat::new(v[7], v[8], v[9], v[10]),
            accel_bias: v3(11),
            gyro_bias: v3(14),
            accel_scale: v3(17),
            position_3s: v3(20),
            velocity_3s: v3(23),
            stationary,
        });
    }
    Ok((rows, smoothed))
}

/// Diagnostics CSV: measurement updates (`kind`, `dim`, `nis`) and
/// stationarity verdicts (`kind = stationarity`, `df_stat`, `window_std`,
/// `stationary`), merged by time with the verdict first. Columns that do not
/// apply to a row are left empty.
pub fn format_diagnostics(updates: &[UpdateReport], verdicts: &[StationarityVerdict]) -> String {
    let mut out = String::from("t,kind,dim,nis,df_stat,window_std,stationary\n");
    let (mut u, mut v) = (updates.iter().peekable(), verdicts.iter().peekable());
    loop {
        let take_verdict = match (u.peek(), v.peek()) {
            (None, None) => break,
            (Some(_), None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b.t <= a.t,
        };
        if take_verdict {
            let x = v.next().expect("peeked");
            let _ = writeln!(out, "{},stationarity,,,{},{},{}", x.t, x.df_stat, x.window_std, x.stationary as u8);
        } else {
            let x = u.next().expect("peeked");
            let _ = writeln!(out, "{},{},{},{},,,", x.t, x.kind.name(), x.innovation.len(), x.nis);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallEstimate {
    pub id: String,
    pub theta: f64,
    pub offset: f64,
    pub theta_std: f64,
    pub offset_std: f64,
}

/// Wall estimates of `b`, labelled with the log ids in `ids` (block order).
pub fn wall_estimates(b: &GaussianBelief, ids: &[(crate::state::BlockId, String)]) -> Vec<WallEstimate> {
    let mut out = Vec::new();
    for (block, label) in ids {
        if let Ok((offset, blk)) = b.mean.block_offset(*block) {
            if let AugValue::WallLine { theta, offset: d } = blk.value {
                out.push(WallEstimate {
                    id: label.clone(),
                    theta,
                    offset: d,
                    theta_std: b.cov[(offset, offset)].sqrt(),
                    offset_std: b.cov[(offset + 1, offset + 1)].sqrt(),
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub kind: String,
    pub count: usize,
    pub dof: usize,
    pub mean_nis: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub dropped_samples: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub smoothed: bool,
    pub final_position: [f64; 3],
    pub final_accel_bias: [f64; 3],
    pub final_gyro_bias: [f64; 3],
    pub final_accel_scale: [f64; 3],
    pub estimated_path_length: f64,
    pub updates: Vec<UpdateStats>,
    pub walls: Vec<WallEstimate>,
}

pub fn update_stats(updates: &[UpdateReport]) -> Vec<UpdateStats> {
    let mut kinds: Vec<UpdateKind> = updates.iter().map(|u| u.kind).collect();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let of_kind: Vec<&UpdateReport> = updates.iter().filter(|u| u.kind == kind).collect();
            let count = of_kind.len();
            UpdateStats {
                kind: kind.name().to_string(),
                count,
                dof: of_kind.iter().map(|u| u.innovation.len()).sum(),
                mean_nis: of_kind.iter().map(|u| u.nis).sum::<f64>() / count as f64,
            }
        })
        .collect()
}

pub fn path_length(rows: &[TrajectoryRow]) -> f64 {
    rows.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
}

/// Files produced by [`write_outputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub filtered: PathBuf,
    pub smoothed: Option<PathBuf>,
    pub diagnostics: PathBuf,
    pub summary: PathBuf,
}

pub fn write_outputs(
    dir: &Path,
    filtered: &[TrajectoryRow],
    smoothed: Option<&[TrajectoryRow]>,
    updates: &[UpdateReport],
    verdicts: &[StationarityVerdict],
    summary: &Summary,
) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = OutputPaths {
        filtered: dir.join("trajectory_filtered.csv"),
        smoothed: smoothed.map(|_| dir.join("trajectory_smoothed.csv")),
        diagnostics: dir.join("diagnostics.csv"),
        summary: dir.join("summary.json"),
    };
    fs::write(&paths.filtered, format_trajectory(filtered, false))?;
    if let (Some(rows), Some(path)) = (smoothed, &paths.smoothed) {
        fs::write(path, format_trajectory(rows, true))?;
    }
    fs::write(&paths.diagnostics, format_diagnostics(updates, verdicts))?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&paths.summary, json + "\n")?;
    Ok(paths)
}
