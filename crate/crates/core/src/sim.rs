//! Ground-truth trajectories and synthetic sensor logs.
//!
//! A scenario is a sequence of segments (rest, walk, turn, tilt) that defines
//! a commanded velocity and attitude. The true state is produced with the
//! same discrete mechanization as the filter: at every IMU timestamp the
//! angular rate and specific force are chosen so that one mechanization step
//! lands exactly on the commanded attitude and velocity. Feeding the
//! noiseless, uncorrupted readings back through the filter's propagation
//! therefore reproduces the truth to rounding error.
//!
//! Raw readings are then corrupted by the calibration model:
//! `a_raw = T⁻¹ (f + b_a + n_a)`, `ω_raw = ω + b_ω + n_ω`, where the per-sample
//! noise std is `σ √Δt`, matching the filter's `ε ~ N(0, Σ Δt)` convention.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::LogRecord;
use crate::math::{Quat, Vec3};
use crate::output::TrajectoryRow;
use crate::propagation::{propagate_mean, ImuSample};
use crate::state::NavState;
use crate::updates::BaroSample;

pub const STANDARD_GRAVITY: f64 = 9.80665;

fn default_gait_amplitude() -> f64 {
    2.0
}

fn default_gait_frequency() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Rest {
        duration: f64,
    },
    /// Translation by `displacement` (world frame, m) with a `sin²` speed
    /// profile and a vertical gait oscillation of `gait_amplitude` (m/s²).
    Walk {
        displacement: [f64; 3],
        duration: f64,
        #[serde(default = "default_gait_amplitude")]
        gait_amplitude: f64,
        #[serde(default = "default_gait_frequency")]
        gait_frequency: f64,
    },
    /// Rotation by `angle` (rad) about world `+z`.
    Turn {
        angle: f64,
        duration: f64,
    },
    /// Rotation by `angle` (rad) about a body-frame axis.
    Tilt {
        axis: [f64; 3],
        angle: f64,
        duration: f64,
    },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Rest { duration }
            | Segment::Walk { duration, .. }
            | Segment::Turn { duration, .. }
            | Segment::Tilt { duration, .. } => *duration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSpec {
    /// Position fix with per-axis noise std (m); the logged value is the true
    /// position plus noise.
    Fix {
        t: f64,
        std: [f64; 3],
    },
    LcOpen {
        t: f64,
        id: String,
    },
    LcClose {
        t: f64,
        id: String,
    },
    WallOpen {
        t: f64,
        id: String,
    },
    WallTouch {
        t: f64,
        id: String,
    },
}

impl EventSpec {
    pub fn t(&self) -> f64 {
        match self {
            EventSpec::Fix { t, .. }
            | EventSpec::LcOpen { t, .. }
            | EventSpec::LcClose { t, .. }
            | EventSpec::WallOpen { t, .. }
            | EventSpec::WallTouch { t, .. } => *t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub segments: Vec<Segment>,
    /// Initial roll/pitch as a horizontal rotation vector (rad); heading starts at 0.
    pub initial_tilt: [f64; 2],
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub accel_scale: [f64; 3],
    /// Accelerometer noise density (m/s²/√s).
    pub accel_noise: f64,
    /// Gyroscope noise density (rad/s/√s).
    pub gyro_noise: f64,
    pub imu_rate: f64,
    /// Uniform timestamp jitter as a fraction of the nominal period.
    pub jitter: f64,
    pub baro_rate: f64,
    /// Barometer altitude noise (m).
    pub baro_noise: f64,
    /// Pressure drift (hPa/s).
    pub baro_drift: f64,
    pub reference_pressure: f64,
    pub meters_per_hpa: f64,
    pub gravity: f64,
    pub events: Vec<EventSpec>,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            segments: Vec::new(),
            initial_tilt: [0.0; 2],
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            accel_scale: [1.0; 3],
            accel_noise: 0.2,
            gyro_noise: 0.02,
            imu_rate: 100.0,
            jitter: 0.05,
            baro_rate: 0.75,
            baro_noise: 0.3,
            baro_drift: 0.1 / 600.0,
            reference_pressure: 1013.25,
            meters_per_hpa: 8.43,
            gravity: STANDARD_GRAVITY,
            events: Vec::new(),
        }
    }
}

impl SimScenario {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// The same scenario without noise, biases, scale errors or jitter.
    pub fn ideal(&self) -> Self {
        Self {
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            accel_scale: [1.0; 3],
            accel_noise: 0.0,
            gyro_noise: 0.0,
            jitter: 0.0,
            baro_noise: 0.0,
            baro_drift: 0.0,
            ..self.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.segments.is_empty() {
            return bad("scenario has no segments".into());
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let d = seg.duration();
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("segment {i} has non-positive duration {d}"));
            }
            match seg {
                Segment::Walk { displacement, gait_amplitude, gait_frequency, .. } => {
                    if !displacement.iter().all(|v| v.is_finite()) || !gait_amplitude.is_finite() {
                        return bad(format!("segment {i}: non-finite walk parameters"));
                    }
                    if !(*gait_frequency > 0.0) {
                        return bad(format!("segment {i}: gait frequency must be positive"));
                    }
                }
                Segment::Turn { angle, .. } if !angle.is_finite() => {
                    return bad(format!("segment {i}: non-finite angle"))
                }
                Segment::Tilt { axis, angle, .. } => {
                    if !(Vec3::from(*axis).norm() > 0.0) || !angle.is_finite() {
                        return bad(format!("segment {i}: tilt needs a non-zero axis and finite angle"));
                    }
                }
                _ => {}
            }
        }
        if !self.accel_scale.iter().all(|s| *s > 0.5 && *s < 1.5) {
            return bad("accel_scale entries must lie in (0.5, 1.5)".into());
        }
        for (name, v) in [
            ("imu_rate", self.imu_rate),
            ("baro_rate", self.baro_rate),
            ("meters_per_hpa", self.meters_per_hpa),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in
            [("accel_noise", self.accel_noise), ("gyro_noise", self.gyro_noise), ("baro_noise", self.baro_noise)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.5)".into());
        }
        if !(300.0 < self.reference_pressure && self.reference_pressure < 1100.0) {
            return bad("reference_pressure outside (300, 1100) hPa".into());
        }
        let end = self.duration();
        for e in &self.events {
            if !(0.0..=end).contains(&e.t()) {
                return bad(format!("event at t = {} outside [0, {end}]", e.t()));
            }
            if let EventSpec::Fix { std, .. } = e {
                if !std.iter().all(|s| *s > 0.0) {
                    return bad("fix std must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Smooth ramp from 0 to 1 with zero slope at both ends.
fn ramp(tau: f64) -> f64 {
    tau - (2.0 * PI * tau).sin() / (2.0 * PI)
}

/// Duration of the speed-up and slow-down at either end of a walk (s).
const WALK_RAMP: f64 = 1.0;

/// Commanded velocity and attitude as functions of time.
struct Command {
    starts: Vec<f64>,
    attitudes: Vec<Quat>,
    segments: Vec<Segment>,
}

impl Command {
    fn new(s: &SimScenario, q0: Quat) -> Self {
        let mut starts = Vec::new();
        let mut attitudes = Vec::new();
        let (mut t, mut q) = (0.0, q0);
        for seg in &s.segments {
            starts.push(t);
            attitudes.push(q);
            q = Self::attitude_in(seg, q, 1.0);
            t += seg.duration();
        }
        Self { starts, attitudes, segments: s.segments.clone() }
    }

    fn attitude_in(seg: &Segment, start: Quat, tau: f64) -> Quat {
        match seg {
            Segment::Turn { angle, .. } => Quat::from_axis_angle(&Vec3::z(), angle * ramp(tau)) * start,
            Segment::Tilt { axis, angle, .. } => start * Quat::from_axis_angle(&Vec3::from(*axis), angle * ramp(tau)),
            _ => start,
        }
    }

    fn at(&self, t: f64) -> (Vec3, Quat) {
        let i = self.starts.iter().rposition(|s| *s <= t).unwrap_or_default();
        let seg = &self.segments[i];
        let local = t - self.starts[i];
        let tau = (local / seg.duration()).clamp(0.0, 1.0);
        let q = Self::attitude_in(seg, self.attitudes[i], tau);
        let v = match seg {
            Segment::Walk { displacement, duration, gait_amplitude, gait_frequency } if tau < 1.0 => {
                let cycles = (gait_frequency * duration).round().max(1.0);
                let omega = 2.0 * PI * cycles / duration;
                // raised-cosine start and stop ramps around a constant cruise
                let ramp = (duration / 4.0).min(WALK_RAMP);
                let edge = local.min(duration - local).max(0.0);
                let profile = if edge < ramp { 0.5 * (1.0 - (PI * edge / ramp).cos()) } else { 1.0 };
                let along = Vec3::from(*displacement) / (duration - ramp) * profile;
                along + Vec3::z() * (gait_amplitude / omega * (omega * local).sin())
            }
            _ => Vec3::zeros(),
        };
        (v, q)
    }
}

/// True trajectory and the injected sensor errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub t: Vec<f64>,
    pub position: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    pub attitude: Vec<Quat>,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub accel_scale: Vec3,
    pub reference_pressure: f64,
    /// Intervals during which the device is at rest.
    pub rest_intervals: Vec<(f64, f64)>,
}

impl SimTruth {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index `k` with `t[k] ≤ t < t[k+1]`, clamped to the valid range.
    fn bracket(&self, t: f64) -> usize {
        match self.t.partition_point(|s| *s <= t) {
            0 => 0,
            k => (k - 1).min(self.t.len().saturating_sub(2)),
        }
    }

    /// Linearly interpolated true position.
    pub fn position_at(&self, t: f64) -> Vec3 {
        if self.t.len() == 1 {
            return self.position[0];
        }
        let k = self.bracket(t);
        let w = ((t - self.t[k]) / (self.t[k + 1] - self.t[k])).clamp(0.0, 1.0);
        self.position[k] * (1.0 - w) + self.position[k + 1] * w
    }

    pub fn is_at_rest(&self, t: f64) -> bool {
        self.rest_intervals.iter().any(|(a, b)| *a <= t && t <= *b)
    }

    /// Arc length of the sampled true path between `t0` and `t1`.
    pub fn path_length_between(&self, t0: f64, t1: f64) -> f64 {
        let mut length = 0.0;
        let mut prev = self.position_at(t0);
        for (t, p) in self.t.iter().zip(&self.position) {
            if *t > t0 && *t < t1 {
                length += (p - prev).norm();
                prev = *p;
            }
        }
        length + (self.position_at(t1) - prev).norm()
    }

    pub fn path_length(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => self.path_length_between(*a, *b),
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.t.len() * 200);
        let v3 = |out: &mut String, name: &str, v: &Vec3| {
            let _ = writeln!(out, "{name},{},{},{}", v.x, v.y, v.z);
        };
        v3(&mut out, "accel_bias", &self.accel_bias);
        v3(&mut out, "gyro_bias", &self.gyro_bias);
        v3(&mut out, "accel_scale", &self.accel_scale);
        let _ = writeln!(out, "reference_pressure,{}", self.reference_pressure);
        for (a, b) in &self.rest_intervals {
            let _ = writeln!(out, "rest,{a},{b}");
        }
        for k in 0..self.t.len() {
            let (p, v, q) = (self.position[k], self.velocity[k], self.attitude[k]);
            let _ = writeln!(
                out,
                "state,{},{},{},{},{},{},{},{},{},{},{}",
                self.t[k], p.x, p.y, p.z, v.x, v.y, v.z, q.w, q.x, q.y, q.z
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut truth = SimTruth {
            t: Vec::new(),
            position: Vec::new(),
            velocity: Vec::new(),
            attitude: Vec::new(),
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            accel_scale: Vec3::repeat(1.0),
            reference_pressure: 1013.25,
            rest_intervals: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse { line: i + 1, reason };
            let fields: Vec<&str> = line.split(',').collect();
            let nums = fields[1..]
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| err(format!("invalid number '{f}'"))))
                .collect::<Result<Vec<f64>>>()?;
            let want = match fields[0] {
                "accel_bias" | "gyro_bias" | "accel_scale" => 3,
                "reference_pressure" => 1,
                "rest" => 2,
                "state" => 11,
                other => return Err(err(format!("unknown truth record '{other}'"))),
            };
            if nums.len() != want {
                return Err(err(format!("'{}' expects {want} values", fields[0])));
            }
            let v3 = |k: usize| Vec3::new(nums[k], nums[k + 1], nums[k + 2]);
            match fields[0] {
                "accel_bias" => truth.accel_bias = v3(0),
                "gyro_bias" => truth.gyro_bias = v3(0),
                "accel_scale" => truth.accel_scale = v3(0),
                "reference_pressure" => truth.reference_pressure = nums[0],
                "rest" => truth.rest_intervals.push((nums[0], nums[1])),
                _ => {
                    if truth.t.last().is_some_and(|last| nums[0] <= *last) {
                        return Err(err("truth states must be strictly increasing in time".into()));
                    }
                    truth.t.push(nums[0]);
                    truth.position.push(v3(1));
                    truth.velocity.push(v3(4));
                    truth.attitude.push(Quat::new(nums[7], nums[8], nums[9], nums[10]));
                }
            }
        }
        Ok(truth)
    }
}

/// Synthesizes the sensor/event log and the truth for `scenario`.
pub fn generate(scenario: &SimScenario, seed: u64) -> Result<(Vec<LogRecord>, SimTruth)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Vec3::new(0.0, 0.0, scenario.gravity);
    let bias_a = Vec3::from(scenario.accel_bias);
    let bias_w = Vec3::from(scenario.gyro_bias);
    let scale = Vec3::from(scenario.accel_scale);
    let end = scenario.duration();
    let nominal = 1.0 / scenario.imu_rate;

    let q0 = Quat::from_rotation_vector(&Vec3::new(scenario.initial_tilt[0], scenario.initial_tilt[1], 0.0));
    let command = Command::new(scenario, q0);
    let mut state = NavState { attitude: q0, ..NavState::default() };

    let noise = |rng: &mut ChaCha8Rng, std: f64| -> Vec3 {
        if std == 0.0 {
            return Vec3::zeros();
        }
        Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * std
    };
    let raw_accel = |f: &Vec3, n: Vec3| (f + bias_a + n).component_div(&scale);

    let mut truth = SimTruth {
        t: vec![0.0],
        position: vec![state.position],
        velocity: vec![state.velocity],
        attitude: vec![state.attitude],
        accel_bias: bias_a,
        gyro_bias: bias_w,
        accel_scale: scale,
        reference_pressure: scenario.reference_pressure,
        rest_intervals: Vec::new(),
    };
    let mut records = Vec::new();
    let f0 = q0.conjugate().rotate(&g);
    let n0 = noise(&mut rng, scenario.accel_noise * nominal.sqrt());
    let nw0 = noise(&mut rng, scenario.gyro_noise * nominal.sqrt());
    records.push(LogRecord::Imu(ImuSample { t: 0.0, accel: raw_accel(&f0, n0), gyro: bias_w + nw0 }));

    let mut t = 0.0;
    loop {
        let dt = nominal * (1.0 + scenario.jitter * rng.gen_range(-1.0..=1.0));
        if t + dt > end + 1e-9 {
            break;
        }
        t += dt;
        let (v_cmd, q_cmd) = command.at(t);
        // ω such that q ⊗ exp(ω dt / 2) = q_cmd
        let phi = (state.attitude.conjugate() * q_cmd).to_rotation_vector();
        let gyro = phi / dt;
        let q_new =
            Quat::from_vector(&(crate::math::omega_update_matrix(&phi) * state.attitude.to_vector())).normalize()?;
        let f_world = (v_cmd - state.velocity) / dt + g;
        let accel = q_new.conjugate().rotate(&f_world);
        let exact = ImuSample { t, accel, gyro };
        state = propagate_mean(&state, &exact, dt, &g)?;

        let na = noise(&mut rng, scenario.accel_noise * dt.sqrt());
        let nw = noise(&mut rng, scenario.gyro_noise * dt.sqrt());
        records.push(LogRecord::Imu(ImuSample { t, accel: raw_accel(&accel, na), gyro: gyro + bias_w + nw }));
        truth.t.push(t);
        truth.position.push(state.position);
        truth.velocity.push(state.velocity);
        truth.attitude.push(state.attitude);
    }

    let mut start = 0.0;
    for seg in &scenario.segments {
        if let Segment::Rest { duration } = seg {
            truth.rest_intervals.push((start, start + duration));
        }
        start += seg.duration();
    }

    let baro_noise = Normal::new(0.0, scenario.baro_noise / scenario.meters_per_hpa)
        .map_err(|e| Error::InvalidScenario(e.to_string()))?;
    // barometer readings and events are stamped with the next IMU timestamp
    let snap = |t: f64| truth.t[truth.t.partition_point(|s| *s < t - 1e-12).min(truth.t.len() - 1)];
    let last = *truth.t.last().unwrap_or(&0.0);
    let mut k = 0;
    loop {
        let nominal = k as f64 / scenario.baro_rate;
        if nominal > last {
            break;
        }
        let tb = snap(nominal);
        let z = truth.position_at(tb).z;
        let pressure = scenario.reference_pressure - z / scenario.meters_per_hpa
            + scenario.baro_drift * tb
            + baro_noise.sample(&mut rng);
        records.push(LogRecord::Baro(BaroSample { t: tb, pressure }));
        k += 1;
    }

    for e in &scenario.events {
        let t = snap(e.t());
        records.push(match e {
            EventSpec::Fix { std, .. } => {
                let std = Vec3::from(*std);
                let n = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                LogRecord::Fix { t, position: truth.position_at(t) + n.component_mul(&std), std }
            }
            EventSpec::LcOpen { id, .. } => LogRecord::LoopOpen { t, id: id.clone() },
            EventSpec::LcClose { id, .. } => LogRecord::LoopClose { t, id: id.clone() },
            EventSpec::WallOpen { id, .. } => LogRecord::WallOpen { t, id: id.clone() },
            EventSpec::WallTouch { id, .. } => LogRecord::WallTouch { t, id: id.clone() },
        });
    }
    records.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.rank().cmp(&b.rank())));
    Ok((records, truth))
}

/// Accuracy of an estimated trajectory against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub endpoint_error: f64,
    /// Endpoint error relative to the true path length (%).
    pub endpoint_error_percent: f64,
    pub path_length: f64,
    pub position_rmse: f64,
    pub altitude_rmse: f64,
    pub accel_bias_error: [f64; 3],
    pub gyro_bias_error: [f64; 3],
    pub accel_scale_error: [f64; 3],
}

pub fn score(estimate: &[TrajectoryRow], truth: &SimTruth) -> Result<Metrics> {
    let (Some(first), Some(last)) = (estimate.first(), estimate.last()) else {
        return Err(Error::TimeRangeMismatch {
            estimate_start: f64::NAN,
            estimate_end: f64::NAN,
            truth_start: truth.t.first().copied().unwrap_or(f64::NAN),
            truth_end: truth.t.last().copied().unwrap_or(f64::NAN),
        });
    };
    let (ts, te) = (truth.t.first().copied().unwrap_or(f64::NAN), truth.t.last().copied().unwrap_or(f64::NAN));
    let tol = 1e-9;
    if !(first.t >= ts - tol && last.t <= te + tol) {
        return Err(Error::TimeRangeMismatch {
            estimate_start: first.t,
            estimate_end: last.t,
            truth_start: ts,
            truth_end: te,
        });
    }
    let endpoint_error = (last.position - truth.position_at(last.t)).norm();
    let path_length = truth.path_length_between(first.t, last.t);
    let endpoint_error_percent = if path_length > 0.0 {
        100.0 * endpoint_error / path_length
    } else if endpoint_error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let n = estimate.len() as f64;
    let (mut sq, mut sq_z) = (0.0, 0.0);
    for row in estimate {
        let d = row.position - truth.position_at(row.t);
        sq += d.norm_squared();
        sq_z += d.z * d.z;
    }
    let arr = |v: Vec3| [v.x, v.y, v.z];
    Ok(Metrics {
        endpoint_error,
        endpoint_error_percent,
        path_length,
        position_rmse: (sq / n).sqrt(),
        altitude_rmse: (sq_z / n).sqrt(),
        accel_bias_error: arr(last.accel_bias - truth.accel_bias),
        gyro_bias_error: arr(last.gyro_bias - truth.gyro_bias),
        accel_scale_error: arr(last.accel_scale - truth.accel_scale),
    })
}

/// Incremental scenario construction with a running clock.
#[derive(Clone, Debug, Default)]
pub struct ScenarioBuilder {
    pub scenario: SimScenario,
    now: f64,
}

impl ScenarioBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    fn push(&mut self, seg: Segment) -> &mut Self {
        self.now += seg.duration();
        self.scenario.segments.push(seg);
        self
    }

    pub fn rest(&mut self, duration: f64) -> &mut Self {
        self.push(Segment::Rest { duration })
    }

    pub fn walk(&mut self, displacement: [f64; 3], duration: f64) -> &mut Self {
        self.walk_with_gait(displacement, duration, default_gait_amplitude())
    }

    pub fn walk_with_gait(&mut self, displacement: [f64; 3], duration: f64, gait_amplitude: f64) -> &mut Self {
        self.push(Segment::Walk { displacement, duration, gait_amplitude, gait_frequency: default_gait_frequency() })
    }

    pub fn turn(&mut self, angle: f64, duration: f64) -> &mut Self {
        self.push(Segment::Turn { angle, duration })
    }

    pub fn tilt(&mut self, axis: [f64; 3], angle: f64, duration: f64) -> &mut Self {
        self.push(Segment::Tilt { axis, angle, duration })
    }

    /// Adds an event `back` seconds before the current clock.
    pub fn event_before(&mut self, back: f64, make: impl FnOnce(f64) -> EventSpec) -> &mut Self {
        let t = self.now - back;
        self.scenario.events.push(make(t));
        self
    }

    pub fn build(&self) -> SimScenario {
        self.scenario.clone()
    }
}

/// Ready-made scenarios.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 6] =
        ["rest", "calibration", "pushchair_loop", "room_scan", "staircase", "consistency_walk"];

    pub fn by_name(name: &str, seed: u64) -> Result<SimScenario> {
        Ok(match name {
            "rest" => rest(60.0),
            "calibration" => calibration(),
            "pushchair_loop" => pushchair_loop(seed),
            "room_scan" => room_scan(seed),
            "staircase" => staircase(),
            "consistency_walk" => consistency_walk(),
            other => return Err(Error::InvalidScenario(format!("unknown preset '{other}'"))),
        })
    }

    /// Motionless device with a drift-free barometer.
    pub fn rest(duration: f64) -> SimScenario {
        let mut b = ScenarioBuilder::new();
        b.scenario.baro_drift = 0.0;
        b.rest(duration).build()
    }

    /// Calibration run: rests in four orientations obtained by rolling about
    /// body `x`, then a 12 m walk along body `x` bracketed by two position
    /// fixes. Body `x` stays level throughout the rests, so its scale error is
    /// only revealed by the distance between the fixes.
    pub fn calibration() -> SimScenario {
        let mut b = ScenarioBuilder::new();
        b.scenario.accel_bias = [0.05, -0.03, 0.02];
        b.scenario.gyro_bias = [0.004, -0.003, 0.002];
        b.scenario.accel_scale = [1.02, 0.98, 1.01];
        b.rest(4.0);
        for _ in 0..4 {
            b.tilt([1.0, 0.0, 0.0], PI / 2.0, 2.0).rest(4.0);
        }
        b.event_before(1.0, |t| EventSpec::Fix { t, std: [0.02; 3] });
        b.walk([12.0, 0.0, 0.0], 12.0).rest(4.0);
        b.event_before(1.0, |t| EventSpec::Fix { t, std: [0.02; 3] });
        b.rest(2.0);
        b.build()
    }

    /// A closed 93 m planar loop pushed at 0.75 m/s with irregular stops; the
    /// device heading follows the walking direction and the wheels give a
    /// weak vertical oscillation.
    pub fn pushchair_loop(seed: u64) -> SimScenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut b = ScenarioBuilder::new();
        b.scenario.accel_bias = [0.04, -0.03, 0.05];
        b.scenario.gyro_bias = [0.002, -0.002, 0.0002];
        b.scenario.accel_scale = [1.01, 0.99, 1.005];
        b.rest(3.0);
        // legs of a 30 × 16.5 m rectangle, split at random stop points
        let legs = [30.0, 16.5, 30.0, 16.5];
        for (i, leg) in legs.iter().enumerate() {
            let pieces = rng.gen_range(2..=3);
            let mut cuts: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.25..0.75)).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.insert(0, 0.0);
            cuts.push(1.0);
            let heading = i as f64 * PI / 2.0;
            for w in cuts.windows(2) {
                let d = leg * (w[1] - w[0]);
                let dir = Vec3::new(heading.cos(), heading.sin(), 0.0) * d;
                b.walk_with_gait([dir.x, dir.y, 0.0], d / 0.75, 0.5).rest(rng.gen_range(0.8..4.0));
            }
            b.turn(PI / 2.0, 2.0).rest(rng.gen_range(0.8..2.0));
        }
        b.rest(2.0);
        b.build()
    }

    /// A 7.30 × 8.45 m room scanned from its center: three wall touches per
    /// wall, device upright with the screen facing into the room. Touch
    /// points scatter 2 cm around the wall.
    pub fn room_scan(seed: u64) -> SimScenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7007);
        let scatter = Normal::new(0.0, 0.02).unwrap();
        let (hx, hy) = (7.30 / 2.0, 8.45 / 2.0);
        let mut b = ScenarioBuilder::new();
        b.scenario.accel_bias = [0.03, -0.02, 0.03];
        b.scenario.gyro_bias = [0.002, -0.001, 0.0002];
        b.rest(3.0);
        b.tilt([1.0, 0.0, 0.0], -PI / 2.0, 2.0).rest(2.0);
        // upright with heading 0 the screen normal points to +y
        let walls: [(&str, f64, [f64; 2], [f64; 2]); 4] = [
            ("south", 0.0, [0.0, -1.0], [1.0, 0.0]),
            ("east", PI / 2.0, [1.0, 0.0], [0.0, 1.0]),
            ("north", PI, [0.0, 1.0], [-1.0, 0.0]),
            ("west", -PI / 2.0, [-1.0, 0.0], [0.0, -1.0]),
        ];
        let mut heading = 0.0;
        let mut pos = Vec3::zeros();
        for (name, face, outward, along) in walls {
            let turn = crate::math::wrap_angle(face - heading);
            if turn.abs() > 1e-12 {
                b.turn(turn, 2.0).rest(1.0);
            }
            heading = face;
            let dist = if outward[0] != 0.0 { hx } else { hy };
            for (k, offset) in [-1.5, 0.0, 1.5].iter().enumerate() {
                let depth = dist + scatter.sample(&mut rng);
                let target =
                    Vec3::new(outward[0] * depth + along[0] * offset, outward[1] * depth + along[1] * offset, 0.0);
                let d = target - pos;
                b.walk([d.x, d.y, 0.0], (d.norm() / 0.6).max(2.0)).rest(3.0);
                pos = target;
                let id = name.to_string();
                if k == 0 {
                    let id = id.clone();
                    b.event_before(1.5, |t| EventSpec::WallOpen { t, id });
                }
                b.event_before(1.5, |t| EventSpec::WallTouch { t, id });
            }
            let d = -pos;
            b.walk([d.x, d.y, 0.0], (d.norm() / 0.6).max(2.0)).rest(2.0);
            pos = Vec3::zeros();
        }
        b.build()
    }

    /// Up a 3 m flight of stairs and back to rest.
    pub fn staircase() -> SimScenario {
        let mut b = ScenarioBuilder::new();
        b.scenario.accel_bias = [0.03, -0.02, 0.02];
        b.scenario.gyro_bias = [0.002, -0.002, 0.0005];
        b.scenario.baro_drift = 0.0;
        b.rest(5.0).walk([4.0, 0.0, 3.0], 8.0).rest(10.0);
        b.build()
    }

    /// A 60 s walk with stops, for consistency checks.
    pub fn consistency_walk() -> SimScenario {
        let mut b = ScenarioBuilder::new();
        b.scenario.accel_bias = [0.03, -0.02, 0.04];
        b.scenario.gyro_bias = [0.003, -0.002, 0.001];
        b.scenario.accel_scale = [1.01, 0.99, 1.0];
        b.scenario.baro_drift = 0.0;
        b.rest(4.0);
        for k in 0..5 {
            let heading = k as f64 * 1.2;
            b.walk([4.0 * f64::cos(heading), 4.0 * f64::sin(heading), 0.0], 5.0).rest(2.5).turn(1.2, 1.5).rest(1.3);
        }
        b.rest(60.0 - b.now());
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imu_only(records: &[LogRecord]) -> Vec<ImuSample> {
        records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Imu(s) => Some(*s),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn rest_is_pure_gravity() {
        let s = presets::rest(5.0).ideal();
        let (records, truth) = generate(&s, 1).unwrap();
        for imu in imu_only(&records) {
            assert!((imu.accel - Vec3::new(0.0, 0.0, STANDARD_GRAVITY)).norm() < 1e-12);
            assert!(imu.gyro.norm() < 1e-12);
        }
        assert!(truth.position.iter().all(|p| p.norm() < 1e-12));
    }

    #[test]
    fn deterministic_by_seed() {
        let s = presets::consistency_walk();
        let (a, _) = generate(&s, 5).unwrap();
        let (b, _) = generate(&s, 5).unwrap();
        let (c, _) = generate(&s, 6).unwrap();
        assert_eq!(crate::log::format_log(&a), crate::log::format_log(&b));
        assert_ne!(crate::log::format_log(&a), crate::log::format_log(&c));
    }

    #[test]
    fn replaying_exact_readings_reproduces_truth() {
        let s = presets::room_scan(3).ideal();
        let (records, truth) = generate(&s, 2).unwrap();
        let g = Vec3::new(0.0, 0.0, s.gravity);
        let samples = imu_only(&records);
        let mut state = NavState { attitude: truth.attitude[0], ..NavState::default() };
        for k in 1..samples.len() {
            state = propagate_mean(&state, &samples[k], samples[k].t - samples[k - 1].t, &g).unwrap();
            assert!((state.position - truth.position[k]).norm() < 1e-6);
        }
    }

    #[test]
    fn truth_is_kinematically_consistent() {
        let (_, truth) = generate(&presets::pushchair_loop(1), 4).unwrap();
        for k in 1..truth.len() {
            let dt = truth.t[k] - truth.t[k - 1];
            let dp = truth.position[k] - truth.position[k - 1];
            assert!((dp - truth.velocity[k - 1] * dt).norm() < 1e-12);
        }
    }

    #[test]
    fn commanded_path_is_followed() {
        let (_, truth) = generate(&presets::pushchair_loop(2), 0).unwrap();
        let length = truth.path_length();
        assert!((length - 93.0).abs() < 0.5, "{length}");
        assert!(truth.position.last().unwrap().norm() < 0.05);
    }

    #[test]
    fn calibration_model_inverts_exactly() {
        let s = presets::calibration();
        let mut clean = s.ideal();
        clean.accel_bias = s.accel_bias;
        clean.gyro_bias = s.gyro_bias;
        clean.accel_scale = s.accel_scale;
        let (corrupted, _) = generate(&clean, 9).unwrap();
        let (exact, _) = generate(&s.ideal(), 9).unwrap();
        let state = NavState {
            accel_bias: Vec3::from(s.accel_bias),
            gyro_bias: Vec3::from(s.gyro_bias),
            accel_scale: Vec3::from(s.accel_scale),
            ..NavState::default()
        };
        for (c, e) in imu_only(&corrupted).iter().zip(imu_only(&exact)) {
            let (a, w) = crate::propagation::correct_inputs(&state, c);
            assert!((a - e.accel).norm() < 1e-12);
            assert!((w - e.gyro).norm() < 1e-12);
        }
    }

    #[test]
    fn jitter_stays_in_band() {
        let (records, _) = generate(&presets::rest(10.0), 3).unwrap();
        let samples = imu_only(&records);
        for w in samples.windows(2) {
            let dt = w[1].t - w[0].t;
            assert!((0.0095 - 1e-12..=0.0105 + 1e-12).contains(&dt));
        }
    }

    #[test]
    fn baro_follows_linearized_formula() {
        let mut s = presets::staircase().ideal();
        s.baro_drift = 0.0;
        let (records, truth) = generate(&s, 0).unwrap();
        for r in &records {
            if let LogRecord::Baro(b) = r {
                let z = truth.position_at(b.t).z;
                assert!((b.pressure - (1013.25 - z / 8.43)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn score_of_truth_is_zero() {
        let (_, truth) = generate(&presets::staircase(), 0).unwrap();
        let rows: Vec<TrajectoryRow> = (0..truth.len())
            .map(|k| TrajectoryRow {
                t: truth.t[k],
                position: truth.position[k],
                velocity: truth.velocity[k],
                attitude: truth.attitude[k],
                accel_bias: truth.accel_bias,
                gyro_bias: truth.gyro_bias,
                accel_scale: truth.accel_scale,
                position_3s: Vec3::zeros(),
                velocity_3s: Vec3::zeros(),
                stationary: false,
            })
            .collect();
        let m = score(&rows, &truth).unwrap();
        assert_eq!((m.endpoint_error, m.position_rmse, m.altitude_rmse), (0.0, 0.0, 0.0));
        assert_eq!(m.accel_bias_error, [0.0; 3]);

        let shifted: Vec<TrajectoryRow> =
            rows.iter().map(|r| TrajectoryRow { position: r.position + Vec3::x(), ..r.clone() }).collect();
        let m = score(&shifted, &truth).unwrap();
        assert!((m.endpoint_error - 1.0).abs() < 1e-12 && (m.position_rmse - 1.0).abs() < 1e-12);
        assert!(m.altitude_rmse.abs() < 1e-12);
    }

    #[test]
    fn score_percent_uses_true_arc_length() {
        let mut b = ScenarioBuilder::new();
        b.rest(1.0).walk([6.0, 8.0, 0.0], 10.0).rest(1.0);
        let s = b.build().ideal();
        let (_, truth) = generate(&s, 0).unwrap();
        let rows: Vec<TrajectoryRow> = [0, truth.len() - 1]
            .iter()
            .map(|&k| TrajectoryRow {
                t: truth.t[k],
                position: truth.position[k] + Vec3::new(0.0, 0.0, 0.3 * k.min(1) as f64),
                velocity: Vec3::zeros(),
                attitude: Quat::IDENTITY,
                accel_bias: Vec3::zeros(),
                gyro_bias: Vec3::zeros(),
                accel_scale: Vec3::repeat(1.0),
                position_3s: Vec3::zeros(),
                velocity_3s: Vec3::zeros(),
                stationary: true,
            })
            .collect();
        let m = score(&rows, &truth).unwrap();
        // arc length of the commanded motion by a fine Riemann sum of the speed
        let n = 200_000;
        let cycles = 20.0;
        let omega = 2.0 * PI * cycles / 10.0;
        let mut arc = 0.0;
        for i in 0..n {
            let tl = (i as f64 + 0.5) * 10.0 / n as f64;
            // 1 s raised-cosine ramps around a 10/9 m/s cruise
            let edge = tl.min(10.0 - tl);
            let horizontal = 10.0 / 9.0 * if edge < 1.0 { 0.5 * (1.0 - (PI * edge).cos()) } else { 1.0 };
            let vertical = 2.0 / omega * (omega * tl).sin();
            arc += (horizontal * horizontal + vertical * vertical).sqrt() * 10.0 / n as f64;
        }
        assert!((m.endpoint_error - 0.3).abs() < 1e-9);
        assert!((m.path_length - arc).abs() / arc < 2e-3, "{} vs {arc}", m.path_length);
        assert!((m.endpoint_error_percent - 100.0 * 0.3 / arc).abs() < 1e-3);
    }

    #[test]
    fn score_rejects_uncovered_estimates() {
        let (_, truth) = generate(&presets::rest(2.0), 0).unwrap();
        let row = TrajectoryRow {
            t: 5.0,
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            attitude: Quat::IDENTITY,
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            accel_scale: Vec3::repeat(1.0),
            position_3s: Vec3::zeros(),
            velocity_3s: Vec3::zeros(),
            stationary: true,
        };
        assert!(matches!(score(&[row], &truth), Err(Error::TimeRangeMismatch { .. })));
        assert!(matches!(score(&[], &truth), Err(Error::TimeRangeMismatch { .. })));
    }

    #[test]
    fn truth_csv_round_trip() {
        let (_, truth) = generate(&presets::staircase(), 1).unwrap();
        assert_eq!(SimTruth::from_csv(&truth.to_csv()).unwrap(), truth);
    }

    #[test]
    fn scenario_toml_round_trip_and_validation() {
        for name in presets::NAMES {
            let s = presets::by_name(name, 1).unwrap();
            let text = s.to_toml().unwrap();
            assert_eq!(SimScenario::from_toml(&text).unwrap(), s, "{name}");
        }
        assert!(matches!(SimScenario::from_toml("imu_rate = 100.0"), Err(Error::InvalidScenario(_))));
        let bad = "[[segments]]\nkind = \"rest\"\nduration = -1.0\n";
        assert!(matches!(SimScenario::from_toml(bad), Err(Error::InvalidScenario(_))));
        assert!(matches!(SimScenario::from_toml("bogus = 1"), Err(Error::InvalidScenario(_))));
    }
}
