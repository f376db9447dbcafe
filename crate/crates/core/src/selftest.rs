//! Runtime self-checks: closed-form Jacobians against central finite
//! differences, the stationary fixed point of the mechanization, and the
//! update and smoother against independent linear-Gaussian oracles.
//!
//! Each suite returns a [`SuiteReport`]; the command-line `selftest` and the
//! acceptance harness print them.

use std::f64::consts::PI;
use std::fmt;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::math::{wrap_angle, Quat, Vec3};
use crate::propagation::{propagate_mean, propagation_jacobians, ImuSample};
use crate::smoother::{rts_smooth_moments, Moments, TraceStep, Transition};
use crate::state::{AugBlock, AugValue, BlockId, GaussianBelief, NavState, BASE_DIM, QUAT};
use crate::updates::{ekf_update, MeasurementModel, Observation};

pub const JACOBIAN_REL_TOL: f64 = 1e-4;
pub const JACOBIAN_ABS_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest violation measure; `≤ 1` passes for Jacobian suites, `≤ tolerance` otherwise.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "ok" } else { "FAILED" };
        write!(
            f,
            "{:<28} {:>6} cases  worst {:.3e} (tol {:.1e})  {tag}",
            self.name, self.cases, self.worst, self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

/// Mixed criterion `|a − b| ≤ abs + rel · max(|a|, |b|)`, as a ratio that passes at `≤ 1`.
fn violation(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (JACOBIAN_ABS_TOL + JACOBIAN_REL_TOL * analytic.abs().max(numeric.abs()))
}

fn worst_entry(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for i in 0..analytic.nrows() {
        for j in 0..analytic.ncols() {
            let v = violation(analytic[(i, j)], numeric[(i, j)]);
            if !(v <= worst.0) {
                worst = (v, (i, j));
            }
        }
    }
    worst
}

fn step_size(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central differences of `f` around `x`; `angular` rows of the output are wrapped.
fn central_differences<F>(x: &DVector<f64>, rows: usize, angular: &[bool], f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let h = step_size(x[j]);
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus[j] += h;
        minus[j] -= h;
        let mut d = f(&plus)? - f(&minus)?;
        for (i, a) in angular.iter().enumerate() {
            if *a {
                d[i] = wrap_angle(d[i]);
            }
        }
        jac.set_column(j, &(d / (2.0 * h)));
    }
    Ok(jac)
}

fn uniform3(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q.normalize().expect("norm checked");
        }
    }
}

/// A random navigation state with one augmented block of each kind.
pub fn random_state(rng: &mut ChaCha8Rng) -> NavState {
    NavState {
        position: uniform3(rng, 20.0),
        velocity: uniform3(rng, 2.0),
        attitude: random_quat(rng),
        accel_bias: uniform3(rng, 0.2),
        gyro_bias: uniform3(rng, 0.02),
        accel_scale: Vec3::repeat(1.0) + uniform3(rng, 0.05),
        aug: vec![
            AugBlock { id: BlockId(0), value: AugValue::LoopClosure(uniform3(rng, 20.0)) },
            AugBlock {
                id: BlockId(1),
                value: AugValue::WallLine { theta: rng.gen_range(-PI..PI), offset: rng.gen_range(-10.0..10.0) },
            },
            AugBlock { id: BlockId(2), value: AugValue::Altitude(rng.gen_range(-5.0..5.0)) },
        ],
    }
}

fn random_sample(rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample { t: 0.0, accel: uniform3(rng, 12.0), gyro: uniform3(rng, 3.0) }
}

/// `F_x` and `F_ε` of the mechanization against central differences.
///
/// Accelerometer noise enters the corrected specific force; it is injected
/// through the raw reading as `T⁻¹ ε_a`. Gyroscope noise is added to the
/// raw rate directly.
pub fn propagation_jacobian_suite(states: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Vec3::new(0.0, 0.0, 9.80665);
    let mut worst = (0.0, String::new());
    for case in 0..states {
        let state = random_state(&mut rng);
        let sample = random_sample(&mut rng);
        let dt = rng.gen_range(0.005..0.05);
        let jac = propagation_jacobians(&state, &sample, dt, &g)?;
        let x = state.flatten();
        let n = x.len();
        let numeric_x = central_differences(&x, n, &vec![false; n], |xp| {
            Ok(propagate_mean(&state.unflatten(xp)?, &sample, dt, &g)?.flatten())
        })?;
        let numeric_e = central_differences(&DVector::zeros(6), n, &vec![false; n], |e| {
            let noisy = ImuSample {
                t: sample.t,
                accel: sample.accel + Vec3::new(e[0], e[1], e[2]).component_div(&state.accel_scale),
                gyro: sample.gyro + Vec3::new(e[3], e[4], e[5]),
            };
            Ok(propagate_mean(&state, &noisy, dt, &g)?.flatten())
        })?;
        for (name, analytic, numeric) in [("F_x", &jac.state, &numeric_x), ("F_eps", &jac.noise, &numeric_e)] {
            let (v, (i, j)) = worst_entry(analytic, numeric);
            if !(v <= worst.0) {
                worst = (v, format!("{name}[{i},{j}] in case {case}"));
            }
        }
    }
    Ok(SuiteReport {
        name: "propagation jacobians",
        cases: states,
        worst: worst.0,
        tolerance: 1.0,
        passed: worst.0 <= 1.0,
        detail: worst.1,
    })
}

/// Every observation Jacobian against central differences.
pub fn observation_jacobian_suite(states: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = [
        Observation::Velocity,
        Observation::Position,
        Observation::Speed,
        Observation::Altitude,
        Observation::LoopClosure(BlockId(0)),
        Observation::AltitudeDifference(BlockId(2)),
        Observation::Wall(BlockId(1)),
    ];
    let mut worst = (0.0, String::new());
    let mut case = 0;
    while case < states {
        let state = random_state(&mut rng);
        // the wall heading is undefined for a device lying (nearly) flat
        if Observation::Wall(BlockId(1)).evaluate(&state).is_err() {
            continue;
        }
        let x = state.flatten();
        for obs in observations {
            let analytic = obs.jacobian(&state)?;
            let numeric =
                central_differences(&x, obs.dim(), &obs.angular_rows(), |xp| obs.evaluate(&state.unflatten(xp)?))?;
            let (v, (i, j)) = worst_entry(&analytic, &numeric);
            if !(v <= worst.0) {
                worst = (v, format!("{obs:?}[{i},{j}] in case {case}"));
            }
        }
        case += 1;
    }
    Ok(SuiteReport {
        name: "observation jacobians",
        cases: states,
        worst: worst.0,
        tolerance: 1.0,
        passed: worst.0 <= 1.0,
        detail: worst.1,
    })
}

/// A device at rest with exact readings stays where it is, step after step.
pub fn fixed_point_suite(steps: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Vec3::new(0.0, 0.0, 9.80665);
    let mut state = NavState {
        position: uniform3(&mut rng, 10.0),
        attitude: random_quat(&mut rng),
        accel_bias: uniform3(&mut rng, 0.2),
        gyro_bias: uniform3(&mut rng, 0.02),
        accel_scale: Vec3::repeat(1.0) + uniform3(&mut rng, 0.05),
        ..NavState::default()
    };
    // raw readings that the calibration model maps to exactly (Rᵀ g, 0)
    let specific = state.attitude.conjugate().rotate(&g);
    let accel = (specific + state.accel_bias).component_div(&state.accel_scale);
    let mut worst: f64 = 0.0;
    let mut t = 0.0;
    for _ in 0..steps {
        let dt = 0.01 * rng.gen_range(0.95..1.05);
        t += dt;
        let next = propagate_mean(&state, &ImuSample { t, accel, gyro: state.gyro_bias }, dt, &g)?;
        worst = worst.max((next.flatten() - state.flatten()).amax());
        state = next;
    }
    Ok(SuiteReport {
        name: "stationary fixed point",
        cases: steps,
        worst,
        tolerance: 1e-12,
        passed: worst <= 1e-12,
        detail: String::new(),
    })
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(n, n)) * scale
}

/// Linear updates of the 19-dimensional state against the information form
/// `P⁺ = (P⁻¹ + Hᵀ R⁻¹ H)⁻¹`, `x⁺ = P⁺ (P⁻¹ x + Hᵀ R⁻¹ y)`.
///
/// The quaternion block is left out of `H` and decorrelated in `P`, so the
/// renormalization after the update is exact and the problem stays linear.
pub fn update_oracle_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let state =
            NavState { position: uniform3(&mut rng, 5.0), velocity: uniform3(&mut rng, 1.0), ..NavState::default() };
        let n = BASE_DIM;
        let mut p = random_spd(&mut rng, n, 0.1);
        for i in QUAT..QUAT + 4 {
            for j in 0..n {
                if i != j {
                    p[(i, j)] = 0.0;
                    p[(j, i)] = 0.0;
                }
            }
        }
        let k = rng.gen_range(1..=4);
        let mut h = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
        h.columns_mut(QUAT, 4).fill(0.0);
        let y = DVector::from_fn(k, |_, _| rng.gen_range(-2.0..2.0));
        let r = random_spd(&mut rng, k, 0.05);

        let b = GaussianBelief::new(state, p.clone(), 0.0)?;
        let (post, _) = ekf_update(&b, &MeasurementModel::linear(h.clone(), &b.mean, y.clone(), r.clone()))?;

        let p_inv = p.clone().try_inverse().expect("SPD");
        let r_inv = r.clone().try_inverse().expect("SPD");
        let cov = (&p_inv + h.transpose() * &r_inv * &h).try_inverse().expect("SPD");
        let mean = &cov * (&p_inv * b.mean.flatten() + h.transpose() * &r_inv * &y);
        worst = worst.max((post.mean.flatten() - mean).amax()).max((post.cov - cov).amax());
    }
    Ok(SuiteReport {
        name: "update vs information form",
        cases,
        worst,
        tolerance: 1e-9,
        passed: worst <= 1e-9,
        detail: String::new(),
    })
}

/// Smoother on a 1-D constant-velocity model against the batch MAP solution
/// of the whole record, solved as one sparse-free least-squares system.
pub fn smoother_oracle_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let steps = rng.gen_range(5..40);
        let dt: f64 = rng.gen_range(0.05..0.5);
        let q = rng.gen_range(0.01..1.0);
        let r = rng.gen_range(0.01..1.0);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let qm = DMatrix::from_row_slice(2, 2, &[dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt]) * q;
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let m0 = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let p0 = random_spd(&mut rng, 2, 0.5);
        let ys: Vec<f64> = (0..steps).map(|k| k as f64 * dt + rng.gen_range(-0.5..0.5)).collect();

        // forward Kalman pass recorded as a trace
        let kalman = |m: &DVector<f64>, p: &DMatrix<f64>, y: f64| {
            let s = (&h * p * h.transpose())[(0, 0)] + r;
            let k = p * h.transpose() / s;
            let mean = m + &k * (y - (&h * m)[0]);
            let a = DMatrix::identity(2, 2) - &k * &h;
            let cov = &a * p * a.transpose() + &k * k.transpose() * r;
            Moments::new(mean, cov)
        };
        let mut trace = vec![TraceStep { t: 0.0, ops: Vec::new(), filtered: kalman(&m0, &p0, ys[0]) }];
        for k in 1..steps {
            let prev = &trace[k - 1].filtered;
            let predicted = Moments::new(&f * &prev.mean, &f * &prev.cov * f.transpose() + &qm);
            let filtered = kalman(&predicted.mean, &predicted.cov, ys[k]);
            let ops = vec![Transition::Predict { transition: f.clone(), predicted }];
            trace.push(TraceStep { t: k as f64 * dt, ops, filtered });
        }
        let smoothed = rts_smooth_moments(&trace)?;

        // batch MAP: information matrix of the stacked states
        let dim = 2 * steps;
        let mut info = DMatrix::zeros(dim, dim);
        let mut eta = DVector::zeros(dim);
        let p0_inv = p0.clone().try_inverse().expect("SPD");
        let q_inv = qm.clone().try_inverse().expect("SPD");
        info.view_mut((0, 0), (2, 2)).add_assign(&p0_inv);
        eta.rows_mut(0, 2).add_assign(&(&p0_inv * &m0));
        for (k, y) in ys.iter().enumerate() {
            let o = 2 * k;
            info.view_mut((o, o), (2, 2)).add_assign(&(h.transpose() * &h / r));
            eta.rows_mut(o, 2).add_assign(&(h.transpose() * (*y / r)));
            if k > 0 {
                let a = o - 2;
                // (x_k − F x_{k−1})ᵀ Q⁻¹ (x_k − F x_{k−1})
                info.view_mut((a, a), (2, 2)).add_assign(&(f.transpose() * &q_inv * &f));
                info.view_mut((o, o), (2, 2)).add_assign(&q_inv);
                let cross = -(f.transpose() * &q_inv);
                info.view_mut((a, o), (2, 2)).add_assign(&cross);
                info.view_mut((o, a), (2, 2)).add_assign(&cross.transpose());
            }
        }
        let chol = info.cholesky().expect("information matrix is SPD");
        let mean = chol.solve(&eta);
        let cov = chol.inverse();
        for (k, s) in smoothed.iter().enumerate() {
            let o = 2 * k;
            worst = worst.max((&s.mean - mean.rows(o, 2)).amax());
            worst = worst.max((&s.cov - cov.view((o, o), (2, 2))).amax());
        }
    }
    Ok(SuiteReport {
        name: "smoother vs batch MAP",
        cases,
        worst,
        tolerance: 1e-8,
        passed: worst <= 1e-8,
        detail: String::new(),
    })
}

/// All suites at their default sizes.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        propagation_jacobian_suite(200, 1)?,
        observation_jacobian_suite(200, 2)?,
        fixed_point_suite(10_000, 3)?,
        update_oracle_suite(200, 4)?,
        smoother_oracle_suite(50, 5)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for report in run_all().unwrap() {
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn a_wrong_jacobian_is_caught() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0 + 1e-3);
        assert!(worst_entry(&a, &b).0 > 1.0);
        let b = DMatrix::from_element(1, 1, 1.0 + 1e-5);
        assert!(worst_entry(&a, &b).0 <= 1.0);
        assert!(violation(0.0, 5e-8) <= 1.0 && violation(0.0, 2e-7) > 1.0);
    }
}
