//! End-to-end runs through the public API: simulate, serialize, parse, filter,
//! smooth, write.

use std::fs;

use odometry_core::log::{format_log, parse_log};
use odometry_core::output::{parse_trajectory, write_outputs};
use odometry_core::sim::{generate, presets, score, EventSpec, ScenarioBuilder};
use odometry_core::{run_session, LogRecord, SessionConfig, SessionOptions, Vec3};
use proptest::prelude::*;

fn smooth() -> SessionOptions {
    SessionOptions { smooth: true, ..Default::default() }
}

fn short_walk() -> ScenarioBuilder {
    let mut b = ScenarioBuilder::new();
    b.rest(2.0).walk([4.0, 1.0, 0.0], 5.0).rest(1.0);
    b.event_before(0.5, |t| EventSpec::Fix { t, std: [0.05; 3] });
    b.walk([-3.0, 2.0, 0.0], 4.0).rest(1.5);
    b
}

fn scratch_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("odometry-pipeline-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn sixty_seconds_at_rest_stay_within_five_centimetres() {
    let (records, _) = generate(&presets::rest(60.0), 11).unwrap();
    let r = run_session(&records, &SessionConfig::default(), &smooth()).unwrap();
    for rows in [&r.filtered, r.smoothed.as_ref().unwrap()] {
        let end = rows.last().unwrap().position;
        assert!(end.norm() < 0.05, "{end}");
    }
}

#[test]
fn same_seed_gives_identical_logs_and_outputs() {
    let scenario = short_walk().build();
    let (a, ta) = generate(&scenario, 9).unwrap();
    let (b, tb) = generate(&scenario, 9).unwrap();
    assert_eq!(format_log(&a), format_log(&b));
    assert_eq!(ta.to_csv(), tb.to_csv());
    let (c, _) = generate(&scenario, 10).unwrap();
    assert_ne!(format_log(&a), format_log(&c));

    let ra = run_session(&a, &SessionConfig::default(), &smooth()).unwrap();
    let rb = run_session(&b, &SessionConfig::default(), &smooth()).unwrap();
    assert_eq!(ra.filtered, rb.filtered);
    assert_eq!(ra.smoothed, rb.smoothed);
}

#[test]
fn parsed_log_runs_like_the_in_memory_one() {
    let (records, truth) = generate(&short_walk().build(), 4).unwrap();
    let parsed = parse_log(&format_log(&records)).unwrap();
    assert_eq!(parsed.len(), records.len());
    let direct = run_session(&records, &SessionConfig::default(), &smooth()).unwrap();
    let via_text = run_session(&parsed, &SessionConfig::default(), &smooth()).unwrap();
    assert_eq!(direct.filtered.len(), via_text.filtered.len());
    for (a, b) in direct.filtered.iter().zip(&via_text.filtered) {
        assert!((a.position - b.position).norm() < 1e-6, "{} {}", a.t, (a.position - b.position).norm());
    }
    let m = score(&via_text.filtered, &truth).unwrap();
    assert!(m.endpoint_error < 1.0, "{m:?}");
}

#[test]
fn smoothed_rows_match_filtered_rows() {
    let (records, truth) = generate(&short_walk().build(), 5).unwrap();
    let r = run_session(&records, &SessionConfig::default(), &smooth()).unwrap();
    let s = r.smoothed.as_ref().unwrap();
    assert_eq!(s.len(), r.filtered.len());
    assert_eq!(s.len(), truth.len());
    assert!(s.iter().zip(&r.filtered).all(|(a, b)| a.t == b.t));
    assert_eq!(s.last(), r.filtered.last());
    // smoothing only uses more data, so its bands are no wider
    for (a, b) in s.iter().zip(&r.filtered) {
        for k in 0..3 {
            assert!(a.position_3s[k] <= b.position_3s[k] * (1.0 + 1e-9) + 1e-12, "{} {k}", a.t);
        }
    }
}

#[test]
fn fix_logged_before_the_first_sample_is_applied_at_the_start() {
    let (records, _) = generate(&presets::rest(4.0), 6).unwrap();
    let fix = |t: f64| LogRecord::Fix { t, position: Vec3::new(0.2, 0.1, -0.1), std: Vec3::repeat(0.03) };
    let mut early = vec![fix(-1.0)];
    early.extend(records.iter().cloned());
    let mut at_start = records.clone();
    at_start.insert(1, fix(records[0].t()));
    let cfg = SessionConfig::default();
    let a = run_session(&early, &cfg, &SessionOptions::default()).unwrap();
    let b = run_session(&at_start, &cfg, &SessionOptions::default()).unwrap();
    assert_eq!(a.filtered, b.filtered);
}

#[test]
fn equal_timestamps_are_ordered_by_kind() {
    let text = "\
imu,0.00,0,0,9.81,0,0,0
lc_open,0.01,a
fix,0.01,0,0,0,0.1,0.1,0.1
baro,0.01,1013.25
imu,0.01,0,0,9.81,0,0,0
";
    let kinds: Vec<&str> = parse_log(text).unwrap().iter().map(|r| r.kind()).collect();
    assert_eq!(kinds, ["imu", "imu", "baro", "fix", "lc_open"]);
}

#[test]
fn empty_log_writes_header_only_files() {
    let dir = scratch_dir("empty");
    let r = run_session(&parse_log("# nothing\n").unwrap(), &SessionConfig::default(), &smooth()).unwrap();
    let paths = write_outputs(&dir, &r.filtered, r.smoothed.as_deref(), &r.updates, &r.verdicts, &r.summary).unwrap();
    for p in [&paths.filtered, paths.smoothed.as_ref().unwrap(), &paths.diagnostics] {
        let text = fs::read_to_string(p).unwrap();
        let header_lines = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(header_lines, 1, "{}", p.display());
    }
    let (rows, smoothed) = parse_trajectory(&fs::read_to_string(paths.smoothed.unwrap()).unwrap()).unwrap();
    assert!(rows.is_empty() && smoothed);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn written_trajectory_reads_back() {
    let dir = scratch_dir("roundtrip");
    let (records, _) = generate(&presets::rest(2.0), 1).unwrap();
    let r = run_session(&records, &SessionConfig::default(), &smooth()).unwrap();
    let paths = write_outputs(&dir, &r.filtered, r.smoothed.as_deref(), &r.updates, &r.verdicts, &r.summary).unwrap();
    let (rows, smoothed) = parse_trajectory(&fs::read_to_string(&paths.filtered).unwrap()).unwrap();
    assert!(!smoothed);
    assert_eq!(rows.len(), r.filtered.len());
    for (a, b) in rows.iter().zip(&r.filtered) {
        assert!((a.position - b.position).norm() < 1e-9);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths.summary).unwrap()).unwrap();
    assert_eq!(summary["samples"], r.filtered.len());
    fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn walks_stay_finite_and_one_row_per_sample(seed in 0u64..1000, dx in -6.0f64..6.0, dy in -6.0f64..6.0) {
        let mut b = ScenarioBuilder::new();
        b.rest(2.0).walk([dx, dy, 0.0], 6.0).rest(1.0);
        let (records, truth) = generate(&b.build(), seed).unwrap();
        let r = run_session(&records, &SessionConfig::default(), &smooth()).unwrap();
        prop_assert_eq!(r.filtered.len(), truth.len());
        prop_assert!(r.filtered.iter().all(|row| row.position.iter().all(|v| v.is_finite())));
        prop_assert!(r.filtered.iter().all(|row| (row.attitude.norm() - 1.0).abs() < 1e-9));

        // with the heading pinned, a short walk ends close to the truth
        let mut cfg = SessionConfig::default();
        cfg.filter.prior_yaw_std = 0.01;
        let r = run_session(&records, &cfg, &SessionOptions::default()).unwrap();
        let end = (r.filtered.last().unwrap().position - truth.position.last().unwrap()).norm();
        prop_assert!(end < 1.0, "endpoint error {}", end);
    }
}
