//! Quaternion algebra, the strapdown increment matrix and the handful of dense
//! linear-algebra helpers the filter needs.
//!
//! Quaternions are stored scalar-first `(w, x, y, z)` everywhere in the crate.
//! A quaternion `q` maps body-frame vectors into the world frame:
//! `v_world = q ⊗ (0, v_body) ⊗ q*`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix4x3, SymmetricEigen, Vector3, Vector4};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this rotation-vector norm the increment matrix uses its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orientation quaternion, scalar first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Raw constructor; the result is not normalized.
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vector_part(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    /// Scales the quaternion to unit norm.
    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) {
            return Err(Error::DegenerateQuaternion { norm: n });
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Unit quaternion for a rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let u = axis / n;
        Self::new(c, s * u.x, s * u.y, s * u.z)
    }

    /// `exp(φ/2)`: the unit quaternion of the rotation vector `φ`.
    pub fn from_rotation_vector(phi: &Vec3) -> Self {
        Self::from_axis_angle(phi, phi.norm())
    }

    /// Rotation vector of a unit quaternion, with angle in `[0, π]`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { Quat::new(-self.w, -self.x, -self.y, -self.z) } else { self };
        let v = q.vector_part();
        let s = v.norm();
        if s < SMALL_ANGLE {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(q.w) / s)
    }

    /// Rotation matrix of a unit quaternion.
    pub fn rotation_matrix(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotates `v` from the body frame into the world frame.
    pub fn rotate(self, v: &Vec3) -> Vec3 {
        let r = self.vector_part();
        let t = 2.0 * r.cross(v);
        v + self.w * t + r.cross(&t)
    }

    /// Matrix `L(q)` with `q ⊗ p = L(q) p`.
    pub fn left_matrix(self) -> Matrix4<f64> {
        let Quat { w, x, y, z } = self;
        Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
    }

    /// Matrix `R(p)` with `q ⊗ p = R(p) q`.
    pub fn right_matrix(self) -> Matrix4<f64> {
        let Quat { w, x, y, z } = self;
        Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
    }
}

impl Mul for Quat {
    type Output = Quat;

    /// Hamilton product.
    fn mul(self, rhs: Quat) -> Quat {
        Quat::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right-multiplication matrix of the pure quaternion `(0, φ)`:
/// `Ξ(φ) q = q ⊗ (0, φ)`. Skew-symmetric with `Ξ² = -‖φ‖² I`.
fn pure_right_matrix(phi: &Vec3) -> Matrix4<f64> {
    Quat::new(0.0, phi.x, phi.y, phi.z).right_matrix()
}

/// Scalar coefficients `(cos(θ/2), sin(θ/2)/θ)` of the increment matrix.
fn increment_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 * (1.0 - t2 / 24.0))
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    }
}

/// `d/dθ [sin(θ/2)/θ] / θ`, evaluated by series where the closed form cancels.
fn sinc_half_derivative_ratio(theta: f64) -> f64 {
    if theta < 1e-2 {
        let t2 = theta * theta;
        -1.0 / 24.0 + t2 / 960.0 - t2 * t2 / 107_520.0
    } else {
        let half = 0.5 * theta;
        (0.5 * theta * half.cos() - half.sin()) / (theta * theta * theta)
    }
}

/// Strapdown quaternion increment for the body-frame rotation vector `φ`:
/// `Ω(φ) q = q ⊗ exp(φ/2)`. Orthogonal for every finite `φ`.
pub fn omega_update_matrix(phi: &Vec3) -> Matrix4<f64> {
    let (c, s) = increment_coefficients(phi.norm());
    Matrix4::identity() * c + pure_right_matrix(phi) * s
}

/// Jacobian `∂(Ω(φ) q)/∂φ`, consistent with both branches of
/// [`omega_update_matrix`].
pub fn omega_jacobian(phi: &Vec3, q: &Quat) -> Matrix4x3<f64> {
    let theta = phi.norm();
    let (_, s) = increment_coefficients(theta);
    let kappa = sinc_half_derivative_ratio(theta);
    let qv = q.to_vector();
    let xi_q = pure_right_matrix(phi) * qv;
    // ∂(Ξ(φ) q)/∂φ
    let mut m = Matrix4x3::zeros();
    m.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-q.vector_part()).transpose());
    m.fixed_view_mut::<3, 3>(1, 0).copy_from(&(Mat3::identity() * q.w + skew(&q.vector_part())));
    qv * phi.transpose() * (-0.5 * s) + xi_q * phi.transpose() * kappa + m * s
}

/// Jacobian of `q ⊗ (0, a) ⊗ q*` with respect to the four quaternion
/// components. At unit `q` its tangential part is the derivative of
/// `R(q) a` on the unit sphere.
pub fn rotation_jacobian(q: &Quat, a: &Vec3) -> Matrix3x4<f64> {
    let r = q.vector_part();
    let d_w = 2.0 * (q.w * a + r.cross(a));
    let d_r = 2.0 * (r.dot(a) * Mat3::identity() + r * a.transpose() - a * r.transpose()) - 2.0 * q.w * skew(a);
    let mut j = Matrix3x4::zeros();
    j.fixed_view_mut::<3, 1>(0, 0).copy_from(&d_w);
    j.fixed_view_mut::<3, 3>(0, 1).copy_from(&d_r);
    j
}

/// Shortest rotation taking unit vector `from` onto unit vector `to`.
pub fn shortest_arc(from: &Vec3, to: &Vec3) -> Quat {
    let a = from.normalize();
    let b = to.normalize();
    let d = a.dot(&b).clamp(-1.0, 1.0);
    let axis = a.cross(&b);
    if axis.norm() < 1e-12 {
        if d > 0.0 {
            return Quat::IDENTITY;
        }
        // antiparallel: any axis orthogonal to `a`
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        return Quat::from_axis_angle(&a.cross(&helper), PI);
    }
    Quat::from_axis_angle(&axis, d.acos())
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// `true` when `m` has no eigenvalue below `-tol · trace(m)`.
///
/// Decided by a Cholesky attempt on the shifted matrix rather than a full
/// eigendecomposition.
pub fn is_psd_within(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let shift = tol * m.trace().abs().max(f64::MIN_POSITIVE);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    shifted.cholesky().is_some()
}

/// Spectral condition number after symmetric diagonal (Jacobi) scaling.
///
/// Returns `f64::INFINITY` for matrices with a non-positive diagonal entry or
/// eigenvalue.
pub fn scaled_condition(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let v = m[(i, i)];
        if !(v > 0.0) {
            return f64::INFINITY;
        }
        d.push(1.0 / v.sqrt());
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
