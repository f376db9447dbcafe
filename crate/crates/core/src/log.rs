//! Sensor/event log in a line-oriented CSV dialect.
//!
//! ```text
//! # comment
//! imu,t,ax,ay,az,wx,wy,wz
//! baro,t,hPa
//! fix,t,x,y,z,sx,sy,sz
//! lc_open,t,id        lc_close,t,id
//! wall_open,t,id      wall_touch,t,id
//! ```
//!
//! Records may be out of order by up to [`REORDER_TOLERANCE`]; they are
//! stably re-sorted by time, and records sharing a timestamp are processed in
//! the order IMU, barometer, fix, loop-closure/wall.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::propagation::ImuSample;
use crate::updates::BaroSample;

/// Largest accepted backwards step in time (s).
pub const REORDER_TOLERANCE: f64 = 0.010;

#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    Imu(ImuSample),
    Baro(BaroSample),
    Fix { t: f64, position: Vec3, std: Vec3 },
    LoopOpen { t: f64, id: String },
    LoopClose { t: f64, id: String },
    WallOpen { t: f64, id: String },
    WallTouch { t: f64, id: String },
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match self {
            LogRecord::Imu(s) => s.t,
            LogRecord::Baro(s) => s.t,
            LogRecord::Fix { t, .. }
            | LogRecord::LoopOpen { t, .. }
            | LogRecord::LoopClose { t, .. }
            | LogRecord::WallOpen { t, .. }
            | LogRecord::WallTouch { t, .. } => *t,
        }
    }

    /// Processing priority among records with equal timestamps.
    pub fn rank(&self) -> u8 {
        match self {
            LogRecord::Imu(_) => 0,
            LogRecord::Baro(_) => 1,
            LogRecord::Fix { .. } => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LogRecord::Imu(_) => "imu",
            LogRecord::Baro(_) => "baro",
            LogRecord::Fix { .. } => "fix",
            LogRecord::LoopOpen { .. } => "lc_open",
            LogRecord::LoopClose { .. } => "lc_close",
            LogRecord::WallOpen { .. } => "wall_open",
            LogRecord::WallTouch { .. } => "wall_touch",
        }
    }

    /// One log line without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = match self {
            LogRecord::Imu(i) => write!(
                s,
                "imu,{},{},{},{},{},{},{}",
                i.t, i.accel.x, i.accel.y, i.accel.z, i.gyro.x, i.gyro.y, i.gyro.z
            ),
            LogRecord::Baro(b) => write!(s, "baro,{},{}", b.t, b.pressure),
            LogRecord::Fix { t, position: p, std: d } => {
                write!(s, "fix,{},{},{},{},{},{},{}", t, p.x, p.y, p.z, d.x, d.y, d.z)
            }
            LogRecord::LoopOpen { t, id }
            | LogRecord::LoopClose { t, id }
            | LogRecord::WallOpen { t, id }
            | LogRecord::WallTouch { t, id } => write!(s, "{},{},{}", self.kind(), t, id),
        };
        s
    }
}

pub fn format_log(records: &[LogRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

fn parse_line(line: &str, n: usize) -> Result<LogRecord> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let err = |reason: String| Error::Parse { line: n, reason };
    let arity = |want: usize| {
        if fields.len() == want {
            Ok(())
        } else {
            Err(err(format!("'{}' expects {} fields, found {}", fields[0], want, fields.len())))
        }
    };
    let num = |i: usize| -> Result<f64> {
        let v: f64 = fields[i].parse().map_err(|_| err(format!("invalid number '{}'", fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(format!("non-finite value '{}'", fields[i])))
        }
    };
    let vec3 = |i: usize| -> Result<Vec3> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
    let id = || -> Result<String> {
        if fields[2].is_empty() {
            Err(err("empty id".into()))
        } else {
            Ok(fields[2].to_string())
        }
    };
    let record = match fields[0] {
        "imu" => {
            arity(8)?;
            LogRecord::Imu(ImuSample { t: num(1)?, accel: vec3(2)?, gyro: vec3(5)? })
        }
        "baro" => {
            arity(3)?;
            let pressure = num(2)?;
            if !(300.0 < pressure && pressure < 1100.0) {
                return Err(err(format!("pressure {pressure} hPa outside (300, 1100)")));
            }
            LogRecord::Baro(BaroSample { t: num(1)?, pressure })
        }
        "fix" => {
            arity(8)?;
            let std = vec3(5)?;
            if std.min() <= 0.0 {
                return Err(err("fix standard deviations must be positive".into()));
            }
            LogRecord::Fix { t: num(1)?, position: vec3(2)?, std }
        }
        "lc_open" => {
            arity(3)?;
            LogRecord::LoopOpen { t: num(1)?, id: id()? }
        }
        "lc_close" => {
            arity(3)?;
            LogRecord::LoopClose { t: num(1)?, id: id()? }
        }
        "wall_open" => {
            arity(3)?;
            LogRecord::WallOpen { t: num(1)?, id: id()? }
        }
        "wall_touch" => {
            arity(3)?;
            LogRecord::WallTouch { t: num(1)?, id: id()? }
        }
        other => return Err(err(format!("unknown record kind '{other}'"))),
    };
    Ok(record)
}

/// Parses, validates and time-orders a log.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    let mut records: Vec<(usize, LogRecord)> = Vec::new();
    let mut latest = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = parse_line(line, n)?;
        let t = rec.t();
        if t < latest - REORDER_TOLERANCE {
            return Err(Error::NonMonotoneTime { line: n, t, previous: latest });
        }
        latest = latest.max(t);
        records.push((n, rec));
    }
    // stable: file order is kept among equal keys
    records.sort_by(|(_, a), (_, b)| a.t().total_cmp(&b.t()).then(a.rank().cmp(&b.rank())));

    let mut loops = HashSet::new();
    let mut walls = HashSet::new();
    for (n, rec) in &records {
        let missing = match rec {
            LogRecord::LoopOpen { id, .. } => {
                loops.insert(id.clone());
                false
            }
            LogRecord::WallOpen { id, .. } => {
                walls.insert(id.clone());
                false
            }
            LogRecord::LoopClose { id, .. } => !loops.contains(id),
            LogRecord::WallTouch { id, .. } => !walls.contains(id),
            _ => false,
        };
        if missing {
            return Err(Error::Parse {
                line: *n,
                reason: format!("{} references an id that was never opened", rec.kind()),
            });
        }
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn imu_line() {
        let recs = parse_log("imu,0.010,0.01,-0.02,9.80,0.001,0.000,-0.002\n").unwrap();
        assert_eq!(
            recs,
            vec![LogRecord::Imu(ImuSample {
                t: 0.010,
                accel: Vec3::new(0.01, -0.02, 9.80),
                gyro: Vec3::new(0.001, 0.0, -0.002)
            })]
        );
    }

    #[test]
    fn baro_line() {
        assert_eq!(
            parse_log("baro,1.333,1013.25").unwrap(),
            vec![LogRecord::Baro(BaroSample { t: 1.333, pressure: 1013.25 })]
        );
    }

    #[test]
    fn comments_and_events() {
        let text =
            "# header\n\nlc_open,0.5,a\nwall_open,0.6,w1\nwall_touch,0.6,w1\nfix,1,1,2,3,0.1,0.1,0.2\nlc_close,9,a\n";
        let recs = parse_log(text).unwrap();
        let kinds: Vec<_> = recs.iter().map(|r| r.kind()).collect();
        assert_eq!(kinds, ["lc_open", "wall_open", "wall_touch", "fix", "lc_close"]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        for (text, line) in [
            ("imu,0,1,2\n", 1),
            ("# c\nbaro,0,abc\n", 2),
            ("baro,0,1013\nbaro,1,50\n", 2),
            ("foo,1,2\n", 1),
            ("fix,0,0,0,0,0,1,1\n", 1),
            ("imu,0,1,2,3,4,5,NaN\n", 1),
        ] {
            match parse_log(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn small_disorder_is_resorted() {
        let text = "imu,0.020,0,0,9.8,0,0,0\nimu,0.015,0,0,9.8,0,0,0\nimu,0.030,0,0,9.8,0,0,0\n";
        let ts: Vec<f64> = parse_log(text).unwrap().iter().map(|r| r.t()).collect();
        assert_eq!(ts, [0.015, 0.020, 0.030]);
    }

    #[test]
    fn large_disorder_is_rejected() {
        let text = "imu,0.100,0,0,9.8,0,0,0\nimu,0.050,0,0,9.8,0,0,0\n";
        assert!(matches!(parse_log(text), Err(Error::NonMonotoneTime { line: 2, .. })));
    }

    #[test]
    fn equal_timestamps_follow_kind_order() {
        let text = "lc_open,1,a\nfix,1,0,0,0,1,1,1\nbaro,1,1000\nimu,1,0,0,9.8,0,0,0\n";
        let kinds: Vec<_> = parse_log(text).unwrap().iter().map(|r| r.kind()).collect();
        assert_eq!(kinds, ["imu", "baro", "fix", "lc_open"]);
    }

    #[test]
    fn unopened_ids_are_rejected() {
        assert!(matches!(parse_log("lc_close,1,x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_log("wall_open,1,x\nwall_touch,2,y\n"), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 7), p in 300.5f64..1099.0) {
            let recs = vec![
                LogRecord::Imu(ImuSample { t: vals[0].abs(), accel: Vec3::new(vals[1], vals[2], vals[3]), gyro: Vec3::new(vals[4], vals[5], vals[6]) }),
                LogRecord::Baro(BaroSample { t: vals[0].abs() + 1.0, pressure: p }),
            ];
            prop_assert_eq!(parse_log(&format_log(&recs)).unwrap(), recs);
        }
    }
}
