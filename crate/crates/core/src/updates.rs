//! Measurement updates. Every observation is turned into a
//! [`MeasurementModel`] evaluated at the current mean and executed by the one
//! Joseph-form [`ekf_update`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{symmetrize, wrap_angle, Mat3, Quat, Vec3};
use crate::state::{AugValue, BlockId, FilterConfig, GaussianBelief, NavState, POS, QUAT, VEL};

/// Largest accepted innovation-covariance condition number.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Horizontal projection of the screen normal below which wall geometry is undefined.
pub const MIN_NORMAL_HORIZONTAL: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaroMode {
    /// Altitude relative to the first reading observes `p_z` directly.
    #[default]
    #[serde(alias = "abs")]
    Absolute,
    /// Consecutive readings observe the height change between them.
    #[serde(alias = "rel")]
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UpdateKind {
    Zupt,
    PositionFix,
    LoopClosure,
    PseudoSpeed,
    BaroAbsolute,
    BaroRelative,
    AltitudeAnchor,
    Wall,
    Linear,
}

impl UpdateKind {
    pub fn name(self) -> &'static str {
        match self {
            UpdateKind::Zupt => "zupt",
            UpdateKind::PositionFix => "fix",
            UpdateKind::LoopClosure => "loop_closure",
            UpdateKind::PseudoSpeed => "pseudo_speed",
            UpdateKind::BaroAbsolute => "baro_abs",
            UpdateKind::BaroRelative => "baro_rel",
            UpdateKind::AltitudeAnchor => "altitude_anchor",
            UpdateKind::Wall => "wall",
            UpdateKind::Linear => "linear",
        }
    }
}

/// Observation functions `h(x)` with closed-form Jacobians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Observation {
    /// `h(x) = v`
    Velocity,
    /// `h(x) = p`
    Position,
    /// `h(x) = ‖v‖`
    Speed,
    /// `h(x) = p_z`
    Altitude,
    /// `h(x) = p − p_anchor`
    LoopClosure(BlockId),
    /// `h(x) = p_z − h_anchor`
    AltitudeDifference(BlockId),
    /// Point-on-line and heading residuals of a wall touch.
    Wall(BlockId),
}

/// World-frame direction of the device screen normal (body `+z`).
pub fn screen_normal(q: &Quat) -> Vec3 {
    let Quat { w, x, y, z } = *q;
    Vec3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w * w - x * x - y * y + z * z)
}

/// Heading of the screen normal in the horizontal plane.
///
/// Scale-invariant in `q`, so its gradient has no component along `q`.
fn normal_heading(q: &Quat) -> Result<(f64, [f64; 4])> {
    let unit = q.normalize()?;
    let n = screen_normal(&unit);
    let horizontal = n.x.hypot(n.y);
    if horizontal < MIN_NORMAL_HORIZONTAL {
        return Err(Error::DegenerateNormal { horizontal });
    }
    let Quat { w, x, y, z } = *q;
    let nx = 2.0 * (x * z + w * y);
    let ny = 2.0 * (y * z - w * x);
    let dnx = [2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x];
    let dny = [-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y];
    let r2 = nx * nx + ny * ny;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = (nx * dny[i] - ny * dnx[i]) / r2;
    }
    Ok((ny.atan2(nx), grad))
}

/// Heading `θ` of the screen normal, used to initialize wall lines.
pub fn screen_heading(q: &Quat) -> Result<f64> {
    normal_heading(q).map(|(h, _)| h)
}

impl Observation {
    pub fn dim(&self) -> usize {
        match self {
            Observation::Velocity | Observation::Position | Observation::LoopClosure(_) => 3,
            Observation::Speed | Observation::Altitude | Observation::AltitudeDifference(_) => 1,
            Observation::Wall(_) => 2,
        }
    }

    /// Rows whose residuals are angles and wrap to `(-π, π]`.
    pub fn angular_rows(&self) -> Vec<bool> {
        match self {
            Observation::Wall(_) => vec![false, true],
            _ => vec![false; self.dim()],
        }
    }

    pub fn evaluate(&self, x: &NavState) -> Result<DVector<f64>> {
        Ok(match *self {
            Observation::Velocity => DVector::from_column_slice(x.velocity.as_slice()),
            Observation::Position => DVector::from_column_slice(x.position.as_slice()),
            Observation::Speed => DVector::from_element(1, x.velocity.norm()),
            Observation::Altitude => DVector::from_element(1, x.position.z),
            Observation::LoopClosure(id) => {
                let anchor = loop_anchor(x, id)?.1;
                DVector::from_column_slice((x.position - anchor).as_slice())
            }
            Observation::AltitudeDifference(id) => {
                let (_, h) = altitude_anchor(x, id)?;
                DVector::from_element(1, x.position.z - h)
            }
            Observation::Wall(id) => {
                let (_, theta, d) = wall_line(x, id)?;
                let (heading, _) = normal_heading(&x.attitude)?;
                DVector::from_vec(vec![
                    theta.cos() * x.position.x + theta.sin() * x.position.y - d,
                    wrap_angle(heading - theta),
                ])
            }
        })
    }

    pub fn jacobian(&self, x: &NavState) -> Result<DMatrix<f64>> {
        let n = x.dim();
        let mut h = DMatrix::zeros(self.dim(), n);
        match *self {
            Observation::Velocity => h.view_mut((0, VEL), (3, 3)).fill_with_identity(),
            Observation::Position => h.view_mut((0, POS), (3, 3)).fill_with_identity(),
            Observation::Speed => {
                let speed = x.velocity.norm();
                if speed > 0.0 {
                    for i in 0..3 {
                        h[(0, VEL + i)] = x.velocity[i] / speed;
                    }
                }
            }
            Observation::Altitude => h[(0, POS + 2)] = 1.0,
            Observation::LoopClosure(id) => {
                let (offset, _) = loop_anchor(x, id)?;
                h.view_mut((0, POS), (3, 3)).fill_with_identity();
                h.view_mut((0, offset), (3, 3)).copy_from(&(-Mat3::identity()));
            }
            Observation::AltitudeDifference(id) => {
                let (offset, _) = altitude_anchor(x, id)?;
                h[(0, POS + 2)] = 1.0;
                h[(0, offset)] = -1.0;
            }
            Observation::Wall(id) => {
                let (offset, theta, _) = wall_line(x, id)?;
                let (_, grad) = normal_heading(&x.attitude)?;
                let (s, c) = theta.sin_cos();
                h[(0, POS)] = c;
                h[(0, POS + 1)] = s;
                h[(0, offset)] = -s * x.position.x + c * x.position.y;
                h[(0, offset + 1)] = -1.0;
                for (i, g) in grad.iter().enumerate() {
                    h[(1, QUAT + i)] = *g;
                }
                h[(1, offset)] = -1.0;
            }
        }
        Ok(h)
    }
}

fn loop_anchor(x: &NavState, id: BlockId) -> Result<(usize, Vec3)> {
    let (offset, block) = x.block_offset(id)?;
    match block.value {
        AugValue::LoopClosure(p) => Ok((offset, p)),
        _ => Err(Error::UnknownBlock(id)),
    }
}

fn altitude_anchor(x: &NavState, id: BlockId) -> Result<(usize, f64)> {
    let (offset, block) = x.block_offset(id)?;
    match block.value {
        AugValue::Altitude(h) => Ok((offset, h)),
        _ => Err(Error::UnknownBlock(id)),
    }
}

fn wall_line(x: &NavState, id: BlockId) -> Result<(usize, f64, f64)> {
    let (offset, block) = x.block_offset(id)?;
    match block.value {
        AugValue::WallLine { theta, offset: d } => Ok((offset, theta, d)),
        _ => Err(Error::UnknownBlock(id)),
    }
}

/// A linearized observation ready for [`ekf_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    pub kind: UpdateKind,
    /// `h(m)` at the current mean.
    pub predicted: DVector<f64>,
    /// `H = ∂h/∂x` at the current mean.
    pub jacobian: DMatrix<f64>,
    pub observed: DVector<f64>,
    pub noise: DMatrix<f64>,
    pub angular: Vec<bool>,
}

impl MeasurementModel {
    pub fn from_observation(
        kind: UpdateKind,
        obs: Observation,
        state: &NavState,
        observed: DVector<f64>,
        noise: DMatrix<f64>,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            predicted: obs.evaluate(state)?,
            jacobian: obs.jacobian(state)?,
            observed,
            noise,
            angular: obs.angular_rows(),
        })
    }

    /// Linear model `y = H x + γ`.
    pub fn linear(jacobian: DMatrix<f64>, state: &NavState, observed: DVector<f64>, noise: DMatrix<f64>) -> Self {
        let predicted = &jacobian * state.flatten();
        let angular = vec![false; observed.len()];
        Self { kind: UpdateKind::Linear, predicted, jacobian, observed, noise, angular }
    }

    pub fn dim(&self) -> usize {
        self.observed.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub kind: UpdateKind,
    pub t: f64,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    /// Normalized innovation squared `νᵀ S⁻¹ ν`.
    pub nis: f64,
}

/// Joseph-form EKF update.
pub fn ekf_update(b: &GaussianBelief, m: &MeasurementModel) -> Result<(GaussianBelief, UpdateReport)> {
    let n = b.dim();
    let k = m.dim();
    if m.jacobian.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.jacobian.ncols() });
    }
    for found in [m.predicted.len(), m.jacobian.nrows(), m.noise.nrows(), m.noise.ncols(), m.angular.len()] {
        if found != k {
            return Err(Error::DimensionMismatch { expected: k, found });
        }
    }

    let mut innovation = &m.observed - &m.predicted;
    for (i, angular) in m.angular.iter().enumerate() {
        if *angular {
            innovation[i] = wrap_angle(innovation[i]);
        }
    }
    let ph_t = &b.cov * m.jacobian.transpose();
    let mut s = &m.jacobian * &ph_t + &m.noise;
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation { condition })?;
    // K = P Hᵀ S⁻¹  ⇔  S Kᵀ = H P
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let nis = innovation.dot(&chol.solve(&innovation));

    let x = b.mean.flatten() + &gain * &innovation;
    let mut mean = b.mean.unflatten(&x)?;
    mean.attitude = mean.attitude.normalize()?;

    let mut a = DMatrix::identity(n, n);
    a -= &gain * &m.jacobian;
    let mut cov = &a * &b.cov * a.transpose() + &gain * &m.noise * gain.transpose();
    symmetrize(&mut cov);

    let report = UpdateReport { kind: m.kind, t: b.t, innovation, innovation_cov: s, nis };
    Ok((b.with_moments(mean, cov), report))
}

fn isotropic(dim: usize, std: f64) -> DMatrix<f64> {
    DMatrix::identity(dim, dim) * (std * std)
}

/// Zero-velocity update `h(x) = v`, `y = 0`.
pub fn make_zupt(b: &GaussianBelief, cfg: &FilterConfig) -> Result<MeasurementModel> {
    MeasurementModel::from_observation(
        UpdateKind::Zupt,
        Observation::Velocity,
        &b.mean,
        DVector::zeros(3),
        isotropic(3, cfg.zupt_noise_std),
    )
}

/// Position fix `h(x) = p` with covariance `noise`.
pub fn make_position_fix(b: &GaussianBelief, fix: &Vec3, noise: &Mat3) -> Result<MeasurementModel> {
    let r = DMatrix::from_fn(3, 3, |i, j| noise[(i, j)]);
    MeasurementModel::from_observation(
        UpdateKind::PositionFix,
        Observation::Position,
        &b.mean,
        DVector::from_column_slice(fix.as_slice()),
        r,
    )
}

/// Loop-closure constraint `p − p_anchor = 0`, usable at opening and at every closing.
pub fn apply_loop_closure(
    b: &GaussianBelief,
    id: BlockId,
    cfg: &FilterConfig,
) -> Result<(GaussianBelief, UpdateReport)> {
    let m = MeasurementModel::from_observation(
        UpdateKind::LoopClosure,
        Observation::LoopClosure(id),
        &b.mean,
        DVector::zeros(3),
        isotropic(3, cfg.lc_meas_std),
    )?;
    ekf_update(b, &m)
}

/// Speed pseudo-update pulling `‖v‖` towards the configured target.
///
/// Returns `None` below `pseudo_speed_min`, where the gradient `vᵀ/‖v‖` is
/// ill-defined.
pub fn make_pseudo_speed(b: &GaussianBelief, cfg: &FilterConfig) -> Result<Option<MeasurementModel>> {
    if b.mean.velocity.norm() < cfg.pseudo_speed_min {
        return Ok(None);
    }
    MeasurementModel::from_observation(
        UpdateKind::PseudoSpeed,
        Observation::Speed,
        &b.mean,
        DVector::from_element(1, cfg.pseudo_speed_target),
        isotropic(1, cfg.pseudo_speed_std),
    )
    .map(Some)
}

/// One barometer reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaroSample {
    pub t: f64,
    /// Static pressure (hPa).
    pub pressure: f64,
}

/// Height above the reference pressure level by the sea-level linearization
/// of the barometric formula, with its variance.
pub fn baro_to_altitude(sample: &BaroSample, reference: f64, cfg: &FilterConfig) -> (f64, f64) {
    let h = -cfg.baro.meters_per_hpa * (sample.pressure - reference);
    (h, cfg.baro.noise_std * cfg.baro.noise_std)
}

/// Absolute altitude update against the session reference pressure.
pub fn make_baro_absolute(
    b: &GaussianBelief,
    sample: &BaroSample,
    reference: Option<f64>,
    cfg: &FilterConfig,
) -> Result<MeasurementModel> {
    let reference = reference.ok_or(Error::MissingReference)?;
    let (h, var) = baro_to_altitude(sample, reference, cfg);
    MeasurementModel::from_observation(
        UpdateKind::BaroAbsolute,
        Observation::Altitude,
        &b.mean,
        DVector::from_element(1, h),
        DMatrix::from_element(1, 1, var),
    )
}

/// Altitude anchor opened at the previous barometer reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AltitudeAnchor {
    pub block: BlockId,
    pub pressure: f64,
}

/// Relative altitude update: the height change since the anchored previous
/// reading. The difference of two readings carries twice the single-reading
/// variance.
pub fn make_baro_relative(
    b: &GaussianBelief,
    sample: &BaroSample,
    previous: Option<AltitudeAnchor>,
    cfg: &FilterConfig,
) -> Result<MeasurementModel> {
    let previous = previous.ok_or(Error::MissingReference)?;
    let (dh, var) = baro_to_altitude(sample, previous.pressure, cfg);
    MeasurementModel::from_observation(
        UpdateKind::BaroRelative,
        Observation::AltitudeDifference(previous.block),
        &b.mean,
        DVector::from_element(1, dh),
        DMatrix::from_element(1, 1, 2.0 * var),
    )
}

/// Absolute altitude update against a reference captured from a reading.
///
/// The captured reading's own noise is shared by every later update; it is
/// carried by the anchor opened with [`open_baro_reference`], so the
/// observation is `p_z − anchor` with single-reading noise.
pub fn make_baro_referenced(
    b: &GaussianBelief,
    sample: &BaroSample,
    reference: AltitudeAnchor,
    cfg: &FilterConfig,
) -> Result<MeasurementModel> {
    let (h, var) = baro_to_altitude(sample, reference.pressure, cfg);
    MeasurementModel::from_observation(
        UpdateKind::BaroAbsolute,
        Observation::AltitudeDifference(reference.block),
        &b.mean,
        DVector::from_element(1, h),
        DMatrix::from_element(1, 1, var),
    )
}

/// Opens a 1-D altitude anchor tied to the current height.
pub fn open_altitude_anchor(b: &GaussianBelief, cfg: &FilterConfig) -> Result<(GaussianBelief, BlockId)> {
    open_anchor(b, cfg, cfg.baro.anchor_open_std)
}

/// Opens the altitude of a reference reading: the current height blurred by
/// one reading's noise.
pub fn open_baro_reference(b: &GaussianBelief, cfg: &FilterConfig) -> Result<(GaussianBelief, BlockId)> {
    open_anchor(b, cfg, cfg.baro.noise_std)
}

fn open_anchor(b: &GaussianBelief, cfg: &FilterConfig, tie_std: f64) -> Result<(GaussianBelief, BlockId)> {
    let prior = cfg.baro.anchor_prior_std * cfg.baro.anchor_prior_std;
    let (augmented, id) = b.append_block(AugValue::Altitude(0.0), &[prior]);
    let m = MeasurementModel::from_observation(
        UpdateKind::AltitudeAnchor,
        Observation::AltitudeDifference(id),
        &augmented.mean,
        DVector::zeros(1),
        isotropic(1, tie_std),
    )?;
    let (conditioned, _) = ekf_update(&augmented, &m)?;
    Ok((conditioned, id))
}

/// Wall-touch observation: the device position lies on the wall line and the
/// screen normal points along the line normal.
pub fn make_wall_observation(b: &GaussianBelief, id: BlockId, cfg: &FilterConfig) -> Result<MeasurementModel> {
    let mut noise = DMatrix::zeros(2, 2);
    noise[(0, 0)] = cfg.wall_point_std * cfg.wall_point_std;
    noise[(1, 1)] = cfg.wall_heading_std * cfg.wall_heading_std;
    MeasurementModel::from_observation(UpdateKind::Wall, Observation::Wall(id), &b.mean, DVector::zeros(2), noise)
}
