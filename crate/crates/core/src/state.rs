//! Navigation state, its flattened Gaussian representation, priors and state
//! augmentation.
//!
//! The flattened layout is fixed:
//!
//! ```text
//! [ p (3) | v (3) | q (4, w x y z) | b_a (3) | b_w (3) | scale diag (3) | augmented blocks... ]
//! ```
//!
//! Augmented blocks are appended in insertion order: loop-closure anchors
//! take three entries, wall lines two (`θ`, `d`), altitude anchors one.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{shortest_arc, Quat, Vec3};
use crate::updates::BaroMode;

pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const QUAT: usize = 6;
pub const ACC_BIAS: usize = 10;
pub const GYRO_BIAS: usize = 13;
pub const ACC_SCALE: usize = 16;
pub const BASE_DIM: usize = 19;

/// Handle of an augmented block, unique within one belief lineage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugValue {
    /// Loop-closure anchor position (m).
    LoopClosure(Vec3),
    /// Wall line `cos θ · x + sin θ · y = d` in the horizontal plane.
    WallLine { theta: f64, offset: f64 },
    /// Altitude anchor used by relative barometer updates (m).
    Altitude(f64),
}

impl AugValue {
    pub fn dim(&self) -> usize {
        match self {
            AugValue::LoopClosure(_) => 3,
            AugValue::WallLine { .. } => 2,
            AugValue::Altitude(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugBlock {
    pub id: BlockId,
    pub value: AugValue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Body-to-world orientation.
    pub attitude: Quat,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    /// Diagonal of the accelerometer scale matrix.
    pub accel_scale: Vec3,
    pub aug: Vec<AugBlock>,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            attitude: Quat::IDENTITY,
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            accel_scale: Vec3::repeat(1.0),
            aug: Vec::new(),
        }
    }
}

impl NavState {
    pub fn dim(&self) -> usize {
        BASE_DIM + self.aug.iter().map(|b| b.value.dim()).sum::<usize>()
    }

    /// Offset of block `id` in the flattened vector.
    pub fn block_offset(&self, id: BlockId) -> Result<(usize, &AugBlock)> {
        let mut offset = BASE_DIM;
        for block in &self.aug {
            if block.id == id {
                return Ok((offset, block));
            }
            offset += block.value.dim();
        }
        Err(Error::UnknownBlock(id))
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.fixed_rows_mut::<3>(POS).copy_from(&self.position);
        x.fixed_rows_mut::<3>(VEL).copy_from(&self.velocity);
        x.fixed_rows_mut::<4>(QUAT).copy_from(&self.attitude.to_vector());
        x.fixed_rows_mut::<3>(ACC_BIAS).copy_from(&self.accel_bias);
        x.fixed_rows_mut::<3>(GYRO_BIAS).copy_from(&self.gyro_bias);
        x.fixed_rows_mut::<3>(ACC_SCALE).copy_from(&self.accel_scale);
        let mut offset = BASE_DIM;
        for block in &self.aug {
            match block.value {
                AugValue::LoopClosure(p) => x.fixed_rows_mut::<3>(offset).copy_from(&p),
                AugValue::WallLine { theta, offset: d } => {
                    x[offset] = theta;
                    x[offset + 1] = d;
                }
                AugValue::Altitude(h) => x[offset] = h,
            }
            offset += block.value.dim();
        }
        x
    }

    /// Builds a state with this state's block layout from a flat vector.
    ///
    /// The quaternion is copied verbatim (not normalized) so that
    /// flatten/unflatten is an exact round trip.
    pub fn unflatten(&self, x: &DVector<f64>) -> Result<NavState> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
        }
        let v3 = |i: usize| Vec3::new(x[i], x[i + 1], x[i + 2]);
        let mut aug = Vec::with_capacity(self.aug.len());
        let mut offset = BASE_DIM;
        for block in &self.aug {
            let value = match block.value {
                AugValue::LoopClosure(_) => AugValue::LoopClosure(v3(offset)),
                AugValue::WallLine { .. } => AugValue::WallLine { theta: x[offset], offset: x[offset + 1] },
                AugValue::Altitude(_) => AugValue::Altitude(x[offset]),
            };
            aug.push(AugBlock { id: block.id, value });
            offset += block.value.dim();
        }
        Ok(NavState {
            position: v3(POS),
            velocity: v3(VEL),
            attitude: Quat::new(x[QUAT], x[QUAT + 1], x[QUAT + 2], x[QUAT + 3]),
            accel_bias: v3(ACC_BIAS),
            gyro_bias: v3(GYRO_BIAS),
            accel_scale: v3(ACC_SCALE),
            aug,
        })
    }
}

/// Gaussian approximation `N(mean, cov)` of the state at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: NavState,
    pub cov: DMatrix<f64>,
    pub t: f64,
    next_block: u32,
}

impl GaussianBelief {
    pub fn new(mean: NavState, cov: DMatrix<f64>, t: f64) -> Result<Self> {
        let dim = mean.dim();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: cov.nrows() });
        }
        let next_block = mean.aug.iter().map(|b| b.id.0 + 1).max().unwrap_or(0);
        Ok(Self { mean, cov, t, next_block })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// Marginal covariance of `len` entries starting at `offset`.
    pub fn marginal(&self, offset: usize, len: usize) -> DMatrix<f64> {
        self.cov.view((offset, offset), (len, len)).into_owned()
    }

    /// Standard deviations of the position components.
    pub fn position_std(&self) -> Vec3 {
        Vec3::new(self.cov[(0, 0)].sqrt(), self.cov[(1, 1)].sqrt(), self.cov[(2, 2)].sqrt())
    }

    pub fn velocity_std(&self) -> Vec3 {
        Vec3::new(self.cov[(3, 3)].sqrt(), self.cov[(4, 4)].sqrt(), self.cov[(5, 5)].sqrt())
    }

    /// Appends an augmented block with a diagonal prior and zero
    /// cross-covariance. Existing marginals are left untouched.
    pub fn append_block(&self, value: AugValue, prior_var: &[f64]) -> (GaussianBelief, BlockId) {
        debug_assert_eq!(prior_var.len(), value.dim());
        let id = BlockId(self.next_block);
        let n = self.dim();
        let k = value.dim();
        let mut cov = DMatrix::zeros(n + k, n + k);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        for (i, var) in prior_var.iter().enumerate() {
            cov[(n + i, n + i)] = *var;
        }
        let mut mean = self.mean.clone();
        mean.aug.push(AugBlock { id, value });
        let belief = GaussianBelief { mean, cov, t: self.t, next_block: self.next_block + 1 };
        (belief, id)
    }

    /// Removes block `id`, marginalizing it out of the joint Gaussian.
    pub fn marginalize(&self, id: BlockId) -> Result<GaussianBelief> {
        let (offset, block) = self.mean.block_offset(id)?;
        let k = block.value.dim();
        let keep: Vec<usize> = (0..self.dim()).filter(|&i| i < offset || i >= offset + k).collect();
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.cov[(keep[i], keep[j])]);
        let mut mean = self.mean.clone();
        mean.aug.retain(|b| b.id != id);
        Ok(GaussianBelief { mean, cov, t: self.t, next_block: self.next_block })
    }

    /// Replaces mean and covariance, keeping block bookkeeping.
    pub(crate) fn with_moments(&self, mean: NavState, cov: DMatrix<f64>) -> GaussianBelief {
        GaussianBelief { mean, cov, t: self.t, next_block: self.next_block }
    }
}

/// Barometer handling options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaroConfig {
    pub mode: BaroMode,
    /// Altitude noise of a single reading (m).
    pub noise_std: f64,
    /// Sea-level linearization of the barometric formula (m/hPa).
    pub meters_per_hpa: f64,
    /// Prior std of a freshly opened altitude anchor (m).
    pub anchor_prior_std: f64,
    /// Noise of the update tying a new altitude anchor to the current height (m).
    pub anchor_open_std: f64,
}

impl Default for BaroConfig {
    fn default() -> Self {
        Self {
            mode: BaroMode::Absolute,
            noise_std: 0.3,
            meters_per_hpa: 8.43,
            anchor_prior_std: 100.0,
            anchor_open_std: 1e-3,
        }
    }
}

/// Filter noise model, priors and update parameters.
///
/// Noise densities follow the `ε ~ N(0, Σ Δt)` convention: the variance of the
/// input noise added to one IMU sample is `sigma² · Δt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub gravity: Vec3,
    /// Accelerometer noise density (m/s²/√s).
    pub sigma_acc: Vec3,
    /// Gyroscope noise density (rad/s/√s).
    pub sigma_gyro: Vec3,
    pub prior_pos_std: Vec3,
    pub prior_vel_std: Vec3,
    /// Std of each quaternion component for roll/pitch and the norm direction.
    pub prior_quat_std: f64,
    /// Heading std (rad); heading cannot be deduced from gravity.
    pub prior_yaw_std: f64,
    pub prior_bias_acc_std: Vec3,
    pub prior_bias_gyro_std: Vec3,
    pub prior_scale_std: Vec3,
    /// Optional random-walk densities; zero keeps biases and scale constant.
    pub bias_acc_walk: f64,
    pub bias_gyro_walk: f64,
    pub scale_walk: f64,
    pub lc_anchor_prior_std: f64,
    /// Loop-closure mismatch std (m), per axis.
    pub lc_meas_std: f64,
    pub zupt_noise_std: f64,
    /// Minimum spacing of zero-velocity updates while stationary (s).
    pub zupt_interval: f64,
    pub pseudo_speed_enabled: bool,
    pub pseudo_speed_target: f64,
    pub pseudo_speed_std: f64,
    pub pseudo_speed_interval: f64,
    /// Below this speed the pseudo-update is skipped (its gradient is singular at 0).
    pub pseudo_speed_min: f64,
    pub baro: BaroConfig,
    pub wall_theta_prior_std: f64,
    pub wall_offset_prior_std: f64,
    pub wall_point_std: f64,
    pub wall_heading_std: f64,
    /// Largest accepted gap between IMU samples (s).
    pub max_gap: f64,
    /// Length of the initial window averaged for the gravity direction (s).
    pub init_window: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gravity: Vec3::new(0.0, 0.0, 9.80665),
            sigma_acc: Vec3::repeat(0.2),
            sigma_gyro: Vec3::repeat(0.02),
            prior_pos_std: Vec3::repeat(1e-3),
            prior_vel_std: Vec3::repeat(1e-3),
            prior_quat_std: 1e-2,
            prior_yaw_std: PI,
            prior_bias_acc_std: Vec3::repeat(0.1),
            prior_bias_gyro_std: Vec3::repeat(0.01),
            prior_scale_std: Vec3::repeat(0.05),
            bias_acc_walk: 0.0,
            bias_gyro_walk: 0.0,
            scale_walk: 0.0,
            lc_anchor_prior_std: 100.0,
            lc_meas_std: 0.3,
            zupt_noise_std: 0.01,
            zupt_interval: 0.25,
            pseudo_speed_enabled: true,
            pseudo_speed_target: 0.75,
            pseudo_speed_std: 2.0,
            pseudo_speed_interval: 1.0,
            pseudo_speed_min: 0.1,
            baro: BaroConfig::default(),
            wall_theta_prior_std: 0.5,
            wall_offset_prior_std: 2.0,
            wall_point_std: 0.02,
            wall_heading_std: 0.05,
            max_gap: 0.2,
            init_window: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.gravity.norm();
        if !(9.7..=9.9).contains(&g) {
            return Err(Error::Config(format!("gravity norm {g} outside [9.7, 9.9]")));
        }
        let positive: [(&str, f64); 22] = [
            ("sigma_acc", self.sigma_acc.min()),
            ("sigma_gyro", self.sigma_gyro.min()),
            ("prior_pos_std", self.prior_pos_std.min()),
            ("prior_vel_std", self.prior_vel_std.min()),
            ("prior_quat_std", self.prior_quat_std),
            ("prior_yaw_std", self.prior_yaw_std),
            ("prior_bias_acc_std", self.prior_bias_acc_std.min()),
            ("prior_bias_gyro_std", self.prior_bias_gyro_std.min()),
            ("prior_scale_std", self.prior_scale_std.min()),
            ("lc_anchor_prior_std", self.lc_anchor_prior_std),
            ("lc_meas_std", self.lc_meas_std),
            ("zupt_noise_std", self.zupt_noise_std),
            ("pseudo_speed_std", self.pseudo_speed_std),
            ("pseudo_speed_min", self.pseudo_speed_min),
            ("baro.noise_std", self.baro.noise_std),
            ("baro.meters_per_hpa", self.baro.meters_per_hpa),
            ("baro.anchor_prior_std", self.baro.anchor_prior_std),
            ("baro.anchor_open_std", self.baro.anchor_open_std),
            ("wall_point_std", self.wall_point_std),
            ("wall_heading_std", self.wall_heading_std),
            ("max_gap", self.max_gap),
            ("init_window", self.init_window),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {value}")));
            }
        }
        for (name, value) in [
            ("bias_acc_walk", self.bias_acc_walk),
            ("bias_gyro_walk", self.bias_gyro_walk),
            ("scale_walk", self.scale_walk),
            ("zupt_interval", self.zupt_interval),
            ("pseudo_speed_interval", self.pseudo_speed_interval),
            ("wall_theta_prior_std", self.wall_theta_prior_std),
            ("wall_offset_prior_std", self.wall_offset_prior_std),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {value}")));
            }
        }
        Ok(())
    }
}

/// Prior belief at time `t` from an averaged accelerometer reading taken
/// while the device is at rest.
///
/// The attitude is the shortest rotation carrying the measured specific force
/// onto world `+z`; heading is therefore fixed at zero and given the large
/// `prior_yaw_std`.
pub fn init_belief(cfg: &FilterConfig, gravity_sample: &Vec3, t: f64) -> Result<GaussianBelief> {
    let norm = gravity_sample.norm();
    if !(norm >= 1.0) {
        return Err(Error::DegenerateGravity { norm });
    }
    let attitude = shortest_arc(gravity_sample, &Vec3::z());
    let mean = NavState { attitude, ..NavState::default() };

    let mut cov = DMatrix::zeros(BASE_DIM, BASE_DIM);
    let mut set_diag = |offset: usize, std: &Vec3| {
        for i in 0..3 {
            cov[(offset + i, offset + i)] = std[i] * std[i];
        }
    };
    set_diag(POS, &cfg.prior_pos_std);
    set_diag(VEL, &cfg.prior_vel_std);
    set_diag(ACC_BIAS, &cfg.prior_bias_acc_std);
    set_diag(GYRO_BIAS, &cfg.prior_bias_gyro_std);
    set_diag(ACC_SCALE, &cfg.prior_scale_std);
    cov.view_mut((QUAT, QUAT), (4, 4)).copy_from(&attitude_prior(&attitude, cfg));
    GaussianBelief::new(mean, cov, t)
}

/// Opens a loop-closure anchor at the current position: a fresh 3-D block
/// with a broad prior, immediately tied to `p` by one closure update.
pub fn augment_loop_closure(b: &GaussianBelief, cfg: &FilterConfig) -> Result<(GaussianBelief, BlockId)> {
    let var = cfg.lc_anchor_prior_std * cfg.lc_anchor_prior_std;
    let (augmented, id) = b.append_block(AugValue::LoopClosure(Vec3::zeros()), &[var; 3]);
    let (conditioned, _) = crate::updates::apply_loop_closure(&augmented, id, cfg)?;
    Ok((conditioned, id))
}

/// Adds a wall line through the current position, oriented along the current
/// screen-normal heading.
pub fn augment_wall_line(b: &GaussianBelief, theta_std: f64, offset_std: f64) -> Result<(GaussianBelief, BlockId)> {
    let theta = crate::updates::screen_heading(&b.mean.attitude)?;
    let p = b.mean.position;
    let offset = theta.cos() * p.x + theta.sin() * p.y;
    Ok(b.append_block(AugValue::WallLine { theta, offset }, &[theta_std * theta_std, offset_std * offset_std]))
}

/// Quaternion covariance for world-frame attitude errors: roll/pitch with
/// angle std `2 · prior_quat_std`, yaw with `prior_yaw_std`, plus variance
/// `prior_quat_std²` along the norm direction.
fn attitude_prior(q: &Quat, cfg: &FilterConfig) -> nalgebra::Matrix4<f64> {
    // exp(δθ/2) ⊗ q ≈ q + ½ (0, δθ) ⊗ q
    let right = q.right_matrix();
    let jac = right.fixed_view::<4, 3>(0, 1) * 0.5;
    let tilt = 2.0 * cfg.prior_quat_std;
    let angles =
        nalgebra::Matrix3::from_diagonal(&Vec3::new(tilt * tilt, tilt * tilt, cfg.prior_yaw_std * cfg.prior_yaw_std));
    let qv = q.to_vector();
    jac * angles * jac.transpose() + qv * qv.transpose() * (cfg.prior_quat_std * cfg.prior_quat_std)
}
