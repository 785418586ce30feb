//! Residual terms and their analytic Jacobians.
//!
//! Rotations are perturbed on the left, `R <- Exp(d) R`, with `R` the
//! body-to-world rotation; camera centers are perturbed additively.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::geometry::skew;
use crate::model::{CameraIntrinsics, PoseSE3};

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;

/// Projection of `x` through the camera minus the observed pixel; `None` when
/// the point is behind the camera.
pub fn reprojection_residual(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    x: &Vector3<f64>,
    observed: &Vector2<f64>,
) -> Option<Vector2<f64>> {
    k.project(&pose.world_to_optical(x)).map(|uv| uv - observed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobian {
    pub residual: Vector2<f64>,
    pub d_rotation: Matrix2x3<f64>,
    pub d_center: Matrix2x3<f64>,
    pub d_focal: Vector2<f64>,
    pub d_point: Matrix2x3<f64>,
}

pub fn reprojection_jacobian(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    x: &Vector3<f64>,
    observed: &Vector2<f64>,
) -> Option<ReprojectionJacobian> {
    let r_cw = pose.r_cw();
    let d = x - pose.translation;
    let pc = r_cw * d;
    let (uv, dpc, df) = k.project_jacobian(&pc)?;
    let d_point = dpc * r_cw;
    Some(ReprojectionJacobian {
        residual: uv - observed,
        d_rotation: d_point * skew(&d),
        d_center: -d_point,
        d_focal: df,
        d_point,
    })
}

/// Weighted horizontal-position residual `w * (C.xy - target)`.
pub fn translation_prior_residual(
    center: &Vector3<f64>,
    target: &Vector2<f64>,
    weight: f64,
) -> Vector2<f64> {
    weight * (center.xy() - target)
}

/// Jacobian of [`translation_prior_residual`] with respect to the center.
pub fn translation_prior_jacobian(weight: f64) -> Matrix2x3<f64> {
    Matrix2x3::new(weight, 0.0, 0.0, 0.0, weight, 0.0)
}

fn flatten(m: &Matrix3<f64>) -> Vector9 {
    Vector9::from_fn(|k, _| m[(k / 3, k % 3)])
}

/// Weighted Frobenius residual `w * vec(R_j R_i^T - target)`, row-major.
pub fn rotation_prior_residual(
    r_i: &Matrix3<f64>,
    r_j: &Matrix3<f64>,
    target: &Matrix3<f64>,
    weight: f64,
) -> Vector9 {
    weight * flatten(&(r_j * r_i.transpose() - target))
}

/// Residual and Jacobians of [`rotation_prior_residual`] with respect to the
/// rotation perturbations of view `i` and view `j`.
pub fn rotation_prior_jacobian(
    r_i: &Matrix3<f64>,
    r_j: &Matrix3<f64>,
    target: &Matrix3<f64>,
    weight: f64,
) -> (Vector9, Matrix9x3, Matrix9x3) {
    let m = r_j * r_i.transpose();
    let mut d_i = Matrix9x3::zeros();
    let mut d_j = Matrix9x3::zeros();
    for k in 0..3 {
        let e = skew(&Vector3::ith(k, 1.0));
        d_j.set_column(k, &(weight * flatten(&(e * m))));
        d_i.set_column(k, &(-weight * flatten(&(m * e))));
    }
    (weight * flatten(&(m - target)), d_i, d_j)
}

/// Weighted relative-motion residual `w * ((C_i - C_j) - target)`; its
/// Jacobian is `w I` for `C_i` and `-w I` for `C_j`.
pub fn motion_prior_residual(
    c_i: &Vector3<f64>,
    c_j: &Vector3<f64>,
    target: &Vector3<f64>,
    weight: f64,
) -> Vector3<f64> {
    weight * ((c_i - c_j) - target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{so3_exp, yaw_rotation};

    #[test]
    fn exact_projection_gives_zero() {
        let k = CameraIntrinsics::centered(1000.0, 640, 480);
        let pose = PoseSE3::identity();
        let x = Vector3::new(5.0, 0.3, -0.2);
        let uv = k.project(&pose.world_to_optical(&x)).unwrap();
        assert_eq!(
            reprojection_residual(&k, &pose, &x, &uv).unwrap(),
            Vector2::zeros()
        );
        let shifted = uv + Vector2::new(3.0, 0.0);
        let r = reprojection_residual(&k, &pose, &x, &shifted).unwrap();
        assert!((r - Vector2::new(-3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_has_no_residual() {
        let k = CameraIntrinsics::centered(1000.0, 640, 480);
        let x = Vector3::new(-5.0, 0.0, 0.0);
        assert!(reprojection_residual(&k, &PoseSE3::identity(), &x, &Vector2::zeros()).is_none());
    }

    #[test]
    fn prior_residual_examples() {
        let c = Vector3::new(4.0, 2.0, 9.0);
        assert_eq!(
            translation_prior_residual(&c, &Vector2::new(4.0, 2.0), 1.0),
            Vector2::zeros()
        );
        let r =
            translation_prior_residual(&Vector3::new(5.0, 2.0, 0.0), &Vector2::new(4.0, 2.0), 1.0);
        assert_eq!(r.norm_squared(), 1.0);

        let ri = yaw_rotation(0.3);
        let rj = yaw_rotation(1.0);
        let target = yaw_rotation(0.7);
        assert!(rotation_prior_residual(&ri, &rj, &target, 1.0).norm() < 1e-15);
        let tilted = so3_exp(&Vector3::new(0.1, 0.0, 0.0)) * rj;
        assert!(rotation_prior_residual(&ri, &tilted, &target, 1.0).norm() > 1e-3);
    }
}
