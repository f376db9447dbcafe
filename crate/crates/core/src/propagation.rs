//! EKF time update: bias/scale-corrected strapdown mechanization and its
//! closed-form Jacobians with respect to the state and the input noise.

use nalgebra::{DMatrix, Matrix4, SMatrix};

use crate::error::{Error, Result};
use crate::math::{is_psd_within, omega_jacobian, omega_update_matrix, rotation_jacobian, symmetrize, Vec3};
use crate::state::{FilterConfig, GaussianBelief, NavState, ACC_BIAS, ACC_SCALE, GYRO_BIAS, POS, QUAT, VEL};

/// One raw IMU reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in the body frame (m/s²).
    pub accel: Vec3,
    /// Angular rate in the body frame (rad/s).
    pub gyro: Vec3,
}

/// `F_x = ∂f/∂x` and `F_ε = ∂f/∂(ε_a, ε_ω)` at the mean with zero noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationJacobians {
    pub state: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// Applies the calibration model: `ã = T a − b_a`, `ω̃ = ω − b_ω`.
pub fn correct_inputs(state: &NavState, sample: &ImuSample) -> (Vec3, Vec3) {
    let accel = state.accel_scale.component_mul(&sample.accel) - state.accel_bias;
    let gyro = sample.gyro - state.gyro_bias;
    (accel, gyro)
}

fn check_dt(dt: f64, max_gap: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt { dt });
    }
    if dt > max_gap {
        return Err(Error::GapTooLarge { dt });
    }
    Ok(())
}

/// Shared intermediate quantities of one mechanization step.
struct Step {
    accel: Vec3,
    phi: Vec3,
    omega: Matrix4<f64>,
    /// `Ω(φ) q_{k-1}` before normalization.
    raw_attitude: nalgebra::Vector4<f64>,
}

fn step(state: &NavState, sample: &ImuSample, dt: f64) -> Step {
    let (accel, gyro) = correct_inputs(state, sample);
    let phi = gyro * dt;
    let omega = omega_update_matrix(&phi);
    let raw_attitude = omega * state.attitude.to_vector();
    Step { accel, phi, omega, raw_attitude }
}

/// Mechanization with zero input noise.
///
/// The attitude is advanced first; the velocity row rotates the corrected
/// specific force with the new attitude, and the position row integrates the
/// previous velocity. Biases, scale and augmented blocks are carried over.
pub fn propagate_mean(state: &NavState, sample: &ImuSample, dt: f64, gravity: &Vec3) -> Result<NavState> {
    propagate_mean_with_gap(state, sample, dt, gravity, 0.2)
}

pub(crate) fn propagate_mean_with_gap(
    state: &NavState,
    sample: &ImuSample,
    dt: f64,
    gravity: &Vec3,
    max_gap: f64,
) -> Result<NavState> {
    check_dt(dt, max_gap)?;
    let s = step(state, sample, dt);
    let attitude = crate::math::Quat::from_vector(&s.raw_attitude).normalize()?;
    let velocity = state.velocity + (attitude.rotate(&s.accel) - gravity) * dt;
    let position = state.position + state.velocity * dt;
    Ok(NavState { position, velocity, attitude, ..state.clone() })
}

/// Closed-form Jacobians of [`propagate_mean`], including the quaternion
/// normalization.
pub fn propagation_jacobians(
    state: &NavState,
    sample: &ImuSample,
    dt: f64,
    gravity: &Vec3,
) -> Result<PropagationJacobians> {
    propagation_jacobians_with_gap(state, sample, dt, gravity, 0.2)
}

pub(crate) fn propagation_jacobians_with_gap(
    state: &NavState,
    sample: &ImuSample,
    dt: f64,
    _gravity: &Vec3,
    max_gap: f64,
) -> Result<PropagationJacobians> {
    check_dt(dt, max_gap)?;
    let n = state.dim();
    let s = step(state, sample, dt);
    let norm = s.raw_attitude.norm();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateQuaternion { norm });
    }
    let q_new = s.raw_attitude / norm;
    let attitude = crate::math::Quat::from_vector(&q_new);
    // d normalize(u)/du
    let project: Matrix4<f64> = (Matrix4::identity() - q_new * q_new.transpose()) / norm;
    let d_omega = omega_jacobian(&s.phi, &state.attitude);

    let dq_dq = project * s.omega;
    let dq_dphi = project * d_omega;
    let rot = attitude.rotation_matrix();
    let d_rot = rotation_jacobian(&attitude, &s.accel);
    let dv_dq = d_rot * dq_dq * dt;
    let dv_dphi: SMatrix<f64, 3, 3> = d_rot * dq_dphi * dt;

    let mut f = DMatrix::identity(n, n);
    for i in 0..3 {
        f[(POS + i, VEL + i)] = dt;
    }
    f.view_mut((QUAT, QUAT), (4, 4)).copy_from(&dq_dq);
    // φ = (ω − b_ω) dt
    f.view_mut((QUAT, GYRO_BIAS), (4, 3)).copy_from(&(-dq_dphi * dt));
    f.view_mut((VEL, QUAT), (3, 4)).copy_from(&dv_dq);
    f.view_mut((VEL, GYRO_BIAS), (3, 3)).copy_from(&(-dv_dphi * dt));
    f.view_mut((VEL, ACC_BIAS), (3, 3)).copy_from(&(-rot * dt));
    f.view_mut((VEL, ACC_SCALE), (3, 3)).copy_from(&(rot * nalgebra::Matrix3::from_diagonal(&sample.accel) * dt));

    let mut g = DMatrix::zeros(n, 6);
    g.view_mut((VEL, 0), (3, 3)).copy_from(&(rot * dt));
    g.view_mut((VEL, 3), (3, 3)).copy_from(&(dv_dphi * dt));
    g.view_mut((QUAT, 3), (4, 3)).copy_from(&(dq_dphi * dt));
    Ok(PropagationJacobians { state: f, noise: g })
}

/// `Q_k = blockdiag(Σ_a, Σ_ω) Δt_k` for the input noise `(ε_a, ε_ω)`.
pub fn input_noise_covariance(cfg: &FilterConfig, dt: f64) -> SMatrix<f64, 6, 6> {
    let mut diag = nalgebra::Vector6::zeros();
    for i in 0..3 {
        diag[i] = cfg.sigma_acc[i] * cfg.sigma_acc[i] * dt;
        diag[3 + i] = cfg.sigma_gyro[i] * cfg.sigma_gyro[i] * dt;
    }
    SMatrix::from_diagonal(&diag)
}

/// Result of one prediction, with the state Jacobian kept for smoothing.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub belief: GaussianBelief,
    pub transition: DMatrix<f64>,
}

/// EKF prediction to the sample's timestamp.
pub fn ekf_predict(b: &GaussianBelief, sample: &ImuSample, cfg: &FilterConfig) -> Result<GaussianBelief> {
    ekf_predict_with_jacobian(b, sample, cfg).map(|p| p.belief)
}

pub fn ekf_predict_with_jacobian(b: &GaussianBelief, sample: &ImuSample, cfg: &FilterConfig) -> Result<Prediction> {
    let dt = sample.t - b.t;
    let mean = propagate_mean_with_gap(&b.mean, sample, dt, &cfg.gravity, cfg.max_gap)?;
    let jac = propagation_jacobians_with_gap(&b.mean, sample, dt, &cfg.gravity, cfg.max_gap)?;

    let q_diag = input_noise_covariance(cfg, dt).diagonal();
    let g_scaled = DMatrix::from_fn(jac.noise.nrows(), 6, |i, j| jac.noise[(i, j)] * q_diag[j]);
    let mut cov = &jac.state * &b.cov * jac.state.transpose() + g_scaled * jac.noise.transpose();

    // The normalization Jacobian removes all variance along the quaternion's
    // norm direction; restore a fixed amount so the covariance stays full rank.
    let q = mean.attitude.to_vector();
    let radial = q * q.transpose() * (cfg.prior_quat_std * cfg.prior_quat_std);
    let mut block = cov.view_mut((QUAT, QUAT), (4, 4));
    block += radial;

    for (offset, density) in
        [(ACC_BIAS, cfg.bias_acc_walk), (GYRO_BIAS, cfg.bias_gyro_walk), (ACC_SCALE, cfg.scale_walk)]
    {
        if density > 0.0 {
            for i in 0..3 {
                cov[(offset + i, offset + i)] += density * density * dt;
            }
        }
    }
    symmetrize(&mut cov);
    if !cov.iter().all(|v| v.is_finite()) || !is_psd_within(&cov, 1e-6) {
        return Err(Error::CovarianceNotPsd { t: sample.t });
    }
    let mut belief = b.with_moments(mean, cov);
    belief.t = sample.t;
    Ok(Prediction { belief, transition: jac.state })
}
