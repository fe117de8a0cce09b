//! Quaternion algebra, scalar-first Hamilton convention, world-from-body.

use log::warn;
use nalgebra::{Matrix3, Matrix4, Matrix4x3, Vector3, Vector4};

/// Tolerance on `|q| - 1` before `quat_left` renormalizes its argument.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Skew-symmetric matrix with `hat(v) * w == v x w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Zero-scalar embedding of a 3-vector into quaternion space.
pub fn embed_h() -> Matrix4x3<f64> {
    let mut h = Matrix4x3::zeros();
    h[(1, 0)] = 1.0;
    h[(2, 1)] = 1.0;
    h[(3, 2)] = 1.0;
    h
}

/// Left-multiplication matrix: `quat_left(q) * p == q ⊗ p`.
///
/// A quaternion further than [`UNIT_TOLERANCE`] from unit norm is normalized
/// first and a warning is logged.
pub fn quat_left(q: &Vector4<f64>) -> Matrix4<f64> {
    let n = q.norm();
    let q = if (n - 1.0).abs() > UNIT_TOLERANCE && n > 0.0 {
        warn!("quat_left: non-unit quaternion (norm {n:.6e}) normalized");
        q / n
    } else {
        *q
    };
    left_unchecked(&q)
}

pub(crate) fn left_unchecked(q: &Vector4<f64>) -> Matrix4<f64> {
    let s = q[0];
    let v = Vector3::new(q[1], q[2], q[3]);
    let mut l = Matrix4::zeros();
    l[(0, 0)] = s;
    for i in 0..3 {
        l[(0, i + 1)] = -v[i];
        l[(i + 1, 0)] = v[i];
    }
    let blk = Matrix3::identity() * s + hat(&v);
    l.fixed_view_mut::<3, 3>(1, 1).copy_from(&blk);
    l
}

/// Right-multiplication matrix: `quat_right(p) * q == q ⊗ p`.
pub fn quat_right(p: &Vector4<f64>) -> Matrix4<f64> {
    let s = p[0];
    let v = Vector3::new(p[1], p[2], p[3]);
    let mut r = Matrix4::zeros();
    r[(0, 0)] = s;
    for i in 0..3 {
        r[(0, i + 1)] = -v[i];
        r[(i + 1, 0)] = v[i];
    }
    let blk = Matrix3::identity() * s - hat(&v);
    r.fixed_view_mut::<3, 3>(1, 1).copy_from(&blk);
    r
}

pub fn conjugate(q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

pub fn multiply(q: &Vector4<f64>, p: &Vector4<f64>) -> Vector4<f64> {
    left_unchecked(q) * p
}

pub fn identity() -> Vector4<f64> {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

/// Rotate a body-frame vector into the world frame.
///
/// Uses the homogeneous quadratic form, so for a non-unit `q` the result is
/// scaled by `|q|^2`. Integrators renormalize after each step.
pub fn rotate(q: &Vector4<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let s = q[0];
    let qv = Vector3::new(q[1], q[2], q[3]);
    v * (s * s - qv.dot(&qv)) + qv * (2.0 * qv.dot(v)) + qv.cross(v) * (2.0 * s)
}

/// Jacobian of [`rotate`] with respect to the four quaternion components.
pub fn rotate_jacobian(q: &Vector4<f64>, v: &Vector3<f64>) -> nalgebra::Matrix3x4<f64> {
    let s = q[0];
    let qv = Vector3::new(q[1], q[2], q[3]);
    let mut jac = nalgebra::Matrix3x4::zeros();
    let d_s = v * (2.0 * s) + qv.cross(v) * 2.0;
    jac.set_column(0, &d_s);
    let d_v = -v * qv.transpose() * 2.0
        + Matrix3::identity() * (2.0 * qv.dot(v))
        + qv * v.transpose() * 2.0
        - hat(v) * (2.0 * s);
    jac.fixed_view_mut::<3, 3>(0, 1).copy_from(&d_v);
    jac
}

/// Attitude Jacobian `G(q) = L(q) H`, the tangent map from a 3-parameter
/// attitude error to quaternion perturbations at `q`.
pub fn attitude_jacobian(q: &Vector4<f64>) -> Matrix4x3<f64> {
    left_unchecked(q) * embed_h()
}

/// Rodrigues-parameter attitude error of `q` relative to `q_ref`.
pub fn attitude_error(q_ref: &Vector4<f64>, q: &Vector4<f64>) -> Vector3<f64> {
    let dq = multiply(&conjugate(q_ref), q);
    Vector3::new(dq[1], dq[2], dq[3]) / dq[0]
}

/// Inverse of [`attitude_error`].
pub fn from_attitude_error(q_ref: &Vector4<f64>, phi: &Vector3<f64>) -> Vector4<f64> {
    let dq = Vector4::new(1.0, phi[0], phi[1], phi[2]) / (1.0 + phi.norm_squared()).sqrt();
    multiply(q_ref, &dq)
}
