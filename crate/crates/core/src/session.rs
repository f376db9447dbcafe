//! Offline session driver: a sequential fold of predictions and updates over
//! a time-ordered record stream, followed by an optional smoothing pass.
//!
//! Per IMU sample: stationarity push, prediction, then a zero-velocity update
//! while stationary or a speed pseudo-update while moving, each at its own
//! cadence. Barometer readings update altitude in the configured mode; fixes,
//! loop-closure and wall events are applied at the current belief. A loop
//! anchor stays open after closing, so a loop can be closed repeatedly;
//! re-opening an id replaces its anchor.
//!
//! The first `init_window` seconds of IMU data are averaged to level the
//! initial attitude. Records arriving before that are buffered and replayed
//! from the initial belief, so events preceding the first IMU sample are
//! applied at the first belief.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::LogRecord;
use crate::math::{Mat3, Vec3};
use crate::output::{path_length, update_stats, wall_estimates, Summary, TrajectoryRow};
use crate::propagation::{ekf_predict_with_jacobian, ImuSample};
use crate::smoother::{rts_smooth, FilterTrace, Transition};
use crate::state::{augment_loop_closure, augment_wall_line, init_belief, BlockId, FilterConfig, GaussianBelief};
use crate::stationarity::{Detector, DetectorConfig, StationarityVerdict};
use crate::updates::{
    apply_loop_closure, ekf_update, make_baro_absolute, make_baro_referenced, make_baro_relative, make_position_fix,
    make_pseudo_speed, make_wall_observation, make_zupt, open_altitude_anchor, open_baro_reference, AltitudeAnchor,
    BaroMode, BaroSample, MeasurementModel, UpdateReport,
};

/// Accepted range of each accelerometer scale entry; leaving it means divergence.
pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);

/// Filter and detector settings, as read from a configuration file.
///
/// TOML layout: [`FilterConfig`] fields at top level (with a `[baro]`
/// table) and [`DetectorConfig`] fields under `[detector]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub filter: FilterConfig,
    pub detector: DetectorConfig,
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let detector = match table.remove("detector") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[detector]: {e}")))?,
            None => DetectorConfig::default(),
        };
        let filter: FilterConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let cfg = Self { filter, detector };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(&self.filter).map_err(|e| Error::Config(e.to_string()))?;
        let detector = toml::Table::try_from(&self.detector).map_err(|e| Error::Config(e.to_string()))?;
        table.insert("detector".into(), toml::Value::Table(detector));
        Ok(table.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.detector.validate()
    }
}

/// Driver options that are not part of the filter model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionOptions {
    /// Record the pass and run the smoother at the end.
    pub smooth: bool,
    /// Reference pressure (hPa) for absolute barometer updates. When unset,
    /// the first reading is the reference and its noise is carried by an
    /// altitude anchor kept for the whole session.
    pub reference_pressure: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub filtered: Vec<TrajectoryRow>,
    pub smoothed: Option<Vec<TrajectoryRow>>,
    pub updates: Vec<UpdateReport>,
    pub verdicts: Vec<StationarityVerdict>,
    pub final_belief: Option<GaussianBelief>,
    pub summary: Summary,
}

enum Phase {
    /// Collecting the initial window.
    Init(Vec<LogRecord>),
    Running(Box<GaussianBelief>),
}

pub struct Session {
    cfg: FilterConfig,
    opts: SessionOptions,
    detector: Detector,
    phase: Phase,
    trace: Option<FilterTrace>,
    ops: Vec<Transition>,
    /// Verdict of the current step, finalized with it.
    stationary: bool,
    rows: Vec<TrajectoryRow>,
    updates: Vec<UpdateReport>,
    verdicts: Vec<StationarityVerdict>,
    last_zupt: Option<f64>,
    last_speed: Option<f64>,
    reference: Option<f64>,
    /// Altitude of the first reading, when no reference pressure is given.
    baro_reference: Option<AltitudeAnchor>,
    anchor: Option<AltitudeAnchor>,
    loops: HashMap<String, BlockId>,
    walls: HashMap<String, BlockId>,
    wall_order: Vec<(BlockId, String)>,
    samples: usize,
    dropped: usize,
}

impl Session {
    pub fn new(cfg: SessionConfig, opts: SessionOptions) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            detector: Detector::new(cfg.detector),
            cfg: cfg.filter,
            trace: opts.smooth.then(FilterTrace::default),
            reference: opts.reference_pressure,
            opts,
            phase: Phase::Init(Vec::new()),
            ops: Vec::new(),
            stationary: false,
            rows: Vec::new(),
            updates: Vec::new(),
            verdicts: Vec::new(),
            last_zupt: None,
            last_speed: None,
            baro_reference: None,
            anchor: None,
            loops: HashMap::new(),
            walls: HashMap::new(),
            wall_order: Vec::new(),
            samples: 0,
            dropped: 0,
        })
    }

    pub fn belief(&self) -> Option<&GaussianBelief> {
        match &self.phase {
            Phase::Running(b) => Some(b),
            Phase::Init(_) => None,
        }
    }

    pub fn updates(&self) -> &[UpdateReport] {
        &self.updates
    }

    pub fn process(&mut self, record: &LogRecord) -> Result<()> {
        match &mut self.phase {
            Phase::Init(buffer) => {
                buffer.push(record.clone());
                let imu: Vec<&ImuSample> = imu_samples(buffer).collect();
                if let (Some(first), Some(last)) = (imu.first(), imu.last()) {
                    if last.t - first.t >= self.cfg.init_window {
                        self.start()?;
                    }
                }
                Ok(())
            }
            Phase::Running(_) => self.apply(record),
        }
    }

    /// Initializes from whatever is buffered and replays it.
    fn start(&mut self) -> Result<()> {
        let Phase::Init(buffer) = std::mem::replace(&mut self.phase, Phase::Init(Vec::new())) else {
            return Ok(());
        };
        let imu: Vec<&ImuSample> = imu_samples(&buffer).collect();
        let Some(first) = imu.first() else {
            self.phase = Phase::Init(buffer);
            return Ok(());
        };
        let t0 = first.t;
        let mean = imu.iter().map(|s| s.accel).sum::<Vec3>() / imu.len() as f64;
        let belief = init_belief(&self.cfg, &mean, t0)?;
        self.phase = Phase::Running(Box::new(belief));
        let first_imu = buffer.iter().position(|r| matches!(r, LogRecord::Imu(_))).unwrap_or(0);
        // events before the first sample see the initial belief
        for (i, r) in buffer.iter().enumerate() {
            if i == first_imu {
                let LogRecord::Imu(s) = r else { unreachable!() };
                self.samples += 1;
                self.push_verdict(s);
            } else {
                self.apply(r)?;
            }
        }
        Ok(())
    }

    fn running(&self) -> &GaussianBelief {
        match &self.phase {
            Phase::Running(b) => b,
            Phase::Init(_) => unreachable!("session not initialized"),
        }
    }

    fn set(&mut self, b: GaussianBelief) -> Result<()> {
        let s = b.mean.accel_scale;
        if !s.iter().all(|v| *v > SCALE_RANGE.0 && *v < SCALE_RANGE.1) {
            return Err(Error::Diverged {
                t: b.t,
                reason: format!("accelerometer scale {:?} left {:?}", s.as_slice(), SCALE_RANGE),
            });
        }
        if !b.mean.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { t: b.t, reason: "non-finite state".into() });
        }
        self.phase = Phase::Running(Box::new(b));
        Ok(())
    }

    fn update(&mut self, m: &MeasurementModel) -> Result<()> {
        let (b, report) = ekf_update(self.running(), m)?;
        self.updates.push(report);
        self.set(b)
    }

    fn append<F>(&mut self, open: F) -> Result<BlockId>
    where
        F: FnOnce(&GaussianBelief) -> Result<(GaussianBelief, BlockId)>,
    {
        let before = self.running().dim();
        let (b, id) = open(self.running())?;
        self.ops.push(Transition::Append { offset: before, len: b.dim() - before });
        self.set(b)?;
        Ok(id)
    }

    fn remove(&mut self, id: BlockId) -> Result<()> {
        let b = self.running();
        let (offset, block) = b.mean.block_offset(id)?;
        let op = Transition::Remove { offset, len: block.value.dim(), before: b.into() };
        let reduced = b.marginalize(id)?;
        self.ops.push(op);
        self.set(reduced)
    }

    fn push_verdict(&mut self, s: &ImuSample) {
        let v = self.detector.push(s);
        self.stationary = v.stationary;
        self.verdicts.push(v);
    }

    /// Closes the current step: one trajectory row and one trace entry.
    fn finish_step(&mut self) {
        let Phase::Running(b) = &self.phase else {
            return;
        };
        self.rows.push(TrajectoryRow::from_belief(b, self.stationary));
        let ops = std::mem::take(&mut self.ops);
        if let Some(trace) = &mut self.trace {
            trace.push(ops, b);
        }
    }

    fn apply(&mut self, record: &LogRecord) -> Result<()> {
        match record {
            LogRecord::Imu(s) => self.on_imu(s),
            LogRecord::Baro(s) => self.on_baro(s),
            LogRecord::Fix { position, std, .. } => {
                let noise = Mat3::from_diagonal(&std.component_mul(std));
                let m = make_position_fix(self.running(), position, &noise)?;
                self.update(&m)
            }
            LogRecord::LoopOpen { id, .. } => {
                if let Some(old) = self.loops.remove(id) {
                    self.remove(old)?;
                }
                let cfg = self.cfg.clone();
                let before = self.updates.len();
                let block = self.append(|b| augment_loop_closure(b, &cfg))?;
                debug_assert_eq!(before, self.updates.len());
                self.loops.insert(id.clone(), block);
                Ok(())
            }
            LogRecord::LoopClose { id, .. } => {
                let block = *self
                    .loops
                    .get(id)
                    .ok_or_else(|| Error::Parse { line: 0, reason: format!("loop '{id}' not open") })?;
                let (b, report) = apply_loop_closure(self.running(), block, &self.cfg)?;
                self.updates.push(report);
                self.set(b)
            }
            LogRecord::WallOpen { id, .. } => {
                if self.walls.contains_key(id) {
                    return Ok(());
                }
                let (theta_std, offset_std) = (self.cfg.wall_theta_prior_std, self.cfg.wall_offset_prior_std);
                let block = self.append(|b| augment_wall_line(b, theta_std, offset_std))?;
                self.walls.insert(id.clone(), block);
                self.wall_order.push((block, id.clone()));
                Ok(())
            }
            LogRecord::WallTouch { id, .. } => {
                let block = *self
                    .walls
                    .get(id)
                    .ok_or_else(|| Error::Parse { line: 0, reason: format!("wall '{id}' not open") })?;
                let m = make_wall_observation(self.running(), block, &self.cfg)?;
                self.update(&m)
            }
        }
    }

    fn on_imu(&mut self, s: &ImuSample) -> Result<()> {
        let dt = s.t - self.running().t;
        if !(dt > 0.0) {
            self.dropped += 1;
            return Ok(());
        }
        self.finish_step();
        self.samples += 1;
        let pred = ekf_predict_with_jacobian(self.running(), s, &self.cfg)?;
        if self.trace.is_some() {
            self.ops.push(Transition::Predict { transition: pred.transition, predicted: (&pred.belief).into() });
        }
        self.set(pred.belief)?;
        self.push_verdict(s);

        let due = |last: Option<f64>, interval: f64| last.is_none_or(|l| s.t - l >= interval - 1e-9);
        if self.stationary {
            if due(self.last_zupt, self.cfg.zupt_interval) {
                let m = make_zupt(self.running(), &self.cfg)?;
                self.update(&m)?;
                self.last_zupt = Some(s.t);
            }
        } else if self.cfg.pseudo_speed_enabled && due(self.last_speed, self.cfg.pseudo_speed_interval) {
            if let Some(m) = make_pseudo_speed(self.running(), &self.cfg)? {
                self.update(&m)?;
                self.last_speed = Some(s.t);
            }
        }
        Ok(())
    }

    fn on_baro(&mut self, s: &BaroSample) -> Result<()> {
        match self.cfg.baro.mode {
            BaroMode::Absolute if self.reference.is_some() => {
                let m = make_baro_absolute(self.running(), s, self.reference, &self.cfg)?;
                self.update(&m)
            }
            BaroMode::Absolute => match self.baro_reference {
                Some(reference) => {
                    let m = make_baro_referenced(self.running(), s, reference, &self.cfg)?;
                    self.update(&m)
                }
                None => {
                    let cfg = self.cfg.clone();
                    let block = self.append(|b| open_baro_reference(b, &cfg))?;
                    self.baro_reference = Some(AltitudeAnchor { block, pressure: s.pressure });
                    Ok(())
                }
            },
            BaroMode::Relative => {
                if let Some(previous) = self.anchor.take() {
                    let m = make_baro_relative(self.running(), s, Some(previous), &self.cfg)?;
                    self.update(&m)?;
                    self.remove(previous.block)?;
                }
                let cfg = self.cfg.clone();
                let block = self.append(|b| open_altitude_anchor(b, &cfg))?;
                self.anchor = Some(AltitudeAnchor { block, pressure: s.pressure });
                Ok(())
            }
        }
    }

    /// Smooths the pass recorded so far, without ending the session.
    pub fn smoothed_so_far(&self) -> Result<Option<Vec<TrajectoryRow>>> {
        let (Some(trace), Phase::Running(b)) = (&self.trace, &self.phase) else {
            return Ok(None);
        };
        let mut trace = trace.clone();
        trace.push(self.ops.clone(), b);
        let flags: Vec<bool> = self.rows.iter().map(|r| r.stationary).chain([self.stationary]).collect();
        let smoothed = rts_smooth(&trace)?;
        Ok(Some(smoothed.iter().zip(flags).map(|(b, f)| TrajectoryRow::from_belief(b, f)).collect()))
    }

    /// Ends the session: closes the last step and runs the smoother if enabled.
    pub fn finish(mut self) -> Result<SessionResult> {
        if matches!(self.phase, Phase::Init(_)) {
            self.start()?;
        }
        self.finish_step();
        let smoothed = match &self.trace {
            Some(trace) if !trace.is_empty() => {
                let beliefs = rts_smooth(trace)?;
                Some(beliefs.iter().zip(&self.rows).map(|(b, r)| TrajectoryRow::from_belief(b, r.stationary)).collect())
            }
            Some(_) => Some(Vec::new()),
            None => None,
        };
        Ok(self.into_result(smoothed))
    }

    /// Everything produced so far, for a diagnostics dump after a failure.
    pub fn partial(mut self) -> SessionResult {
        self.finish_step();
        self.into_result(None)
    }

    fn into_result(self, smoothed: Option<Vec<TrajectoryRow>>) -> SessionResult {
        let final_belief = match self.phase {
            Phase::Running(b) => Some(*b),
            Phase::Init(_) => None,
        };
        let best = smoothed.as_deref().unwrap_or(&self.rows);
        let arr = |v: Vec3| [v.x, v.y, v.z];
        let mut summary = Summary {
            samples: self.samples,
            dropped_samples: self.dropped,
            smoothed: smoothed.is_some(),
            estimated_path_length: path_length(best),
            updates: update_stats(&self.updates),
            ..Summary::default()
        };
        if let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) {
            summary.start_time = first.t;
            summary.end_time = last.t;
            summary.final_position = arr(last.position);
            summary.final_accel_bias = arr(last.accel_bias);
            summary.final_gyro_bias = arr(last.gyro_bias);
            summary.final_accel_scale = arr(last.accel_scale);
        }
        if let Some(b) = &final_belief {
            summary.walls = wall_estimates(b, &self.wall_order);
        }
        SessionResult {
            filtered: self.rows,
            smoothed,
            updates: self.updates,
            verdicts: self.verdicts,
            final_belief,
            summary,
        }
    }

    pub fn options(&self) -> &SessionOptions {
        &self.opts
    }
}

fn imu_samples(records: &[LogRecord]) -> impl Iterator<Item = &ImuSample> {
    records.iter().filter_map(|r| match r {
        LogRecord::Imu(s) => Some(s),
        _ => None,
    })
}

/// Runs a whole session over time-ordered records.
pub fn run_session(records: &[LogRecord], cfg: &SessionConfig, opts: &SessionOptions) -> Result<SessionResult> {
    let mut session = Session::new(cfg.clone(), opts.clone())?;
    for r in records {
        session.process(r)?;
    }
    session.finish()
}
