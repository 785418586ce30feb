//! Small rotation and projection helpers shared by the estimators.
//!
//! Frame conventions used throughout the crate:
//!
//! * World frame: right-handed East-North-Up, meters.
//! * Body frame of a camera: x forward, y left, z up. A [`PoseSE3`](crate::model::PoseSE3)
//!   stores the body-to-world rotation and the camera center in world coordinates,
//!   so a yaw-only rotation describes a level camera looking along its heading.
//! * Optical frame: x right, y down, z along the viewing direction. Pixel projection
//!   and all epipolar geometry happen in this frame.

use nalgebra::{Matrix3, Vector3, SVD};
use std::f64::consts::PI;

/// Rotation taking body-frame vectors (forward, left, up) to the optical frame
/// (right, down, forward).
#[rustfmt::skip]
pub fn optical_from_body() -> Matrix3<f64> {
    Matrix3::new(
        0.0, -1.0,  0.0,
        0.0,  0.0, -1.0,
        1.0,  0.0,  0.0,
    )
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Rotation about +Z by `yaw` radians, counterclockwise seen from above.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Heading of the body x axis projected onto the horizontal plane.
pub fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let e = r * r.transpose() - Matrix3::identity();
    e.iter().all(|x| x.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

/// Angle between two viewing rays, in radians.
pub fn ray_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // atan2 form stays accurate for tiny angles.
    a.cross(b).norm().atan2(a.dot(b))
}
