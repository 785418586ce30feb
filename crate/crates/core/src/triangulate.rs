//! Multi-view point triangulation: linear DLT start, robust Levenberg-Marquardt refinement.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ray_angle;
use crate::loss::{huber_cost, huber_weight};
use crate::model::{CameraIntrinsics, Point3D, PoseSE3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("need at least two observations, got {0}")]
    TooFewObservations(usize),
    #[error("ill-conditioned linear system (singular value ratio {0:.4})")]
    IllConditioned(f64),
    #[error("point lies behind camera {0}")]
    Cheirality(usize),
    #[error("point rejected: mean reprojection {mean_reproj_px:.3} px, angle {angle_deg:.3} deg")]
    Rejected { mean_reproj_px: f64, angle_deg: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TriangulationConfig {
    pub max_reproj_px: f64,
    pub min_angle_deg: f64,
    /// Huber width as a multiple of `max_reproj_px`.
    pub huber_factor: f64,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            max_reproj_px: 8.0,
            min_angle_deg: 1.5,
            huber_factor: 3.0,
            max_iterations: 100,
            rel_tolerance: 1e-10,
        }
    }
}

/// One observation of the point: a pixel-space projection matrix `P = K [R | t]`
/// and the measured pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObservation {
    pub projection: Matrix3x4<f64>,
    pub pixel: Vector2<f64>,
}

impl PointObservation {
    pub fn new(projection: Matrix3x4<f64>, pixel: Vector2<f64>) -> Self {
        Self { projection, pixel }
    }

    pub fn from_pose(pose: &PoseSE3, intrinsics: &CameraIntrinsics, pixel: Vector2<f64>) -> Self {
        Self::new(pose.projection_matrix(intrinsics), pixel)
    }

    /// Homogeneous image point `(x, y, w)`.
    fn image(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.projection * x.push(1.0)
    }

    fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        let h = self.image(x);
        (h.z > 0.0).then(|| Vector2::new(h.x / h.z, h.y / h.z))
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        let m = self.projection.fixed_view::<3, 3>(0, 0).into_owned();
        let p4 = self.projection.column(3).into_owned();
        -(m.try_inverse().unwrap_or_else(Matrix3::zeros) * p4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationResult {
    pub point: Point3D,
    /// Per-observation reprojection error in pixels, input order.
    pub reproj_errors: Vec<f64>,
    pub mean_reprojection_error: f64,
    /// Largest angle between any two viewing rays, radians.
    pub triangulation_angle: f64,
    /// Robust cost at the DLT estimate and after refinement.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

/// Linear triangulation. Returns the point and the ratio of the two smallest
/// singular values of the stacked constraint matrix.
pub fn triangulate_dlt(
    obs: &[PointObservation],
) -> Result<(Vector3<f64>, f64), TriangulationError> {
    if obs.len() < 2 {
        return Err(TriangulationError::TooFewObservations(obs.len()));
    }
    // Condition pixel coordinates around their centroid.
    let n = obs.len() as f64;
    let c = obs.iter().fold(Vector2::zeros(), |a, o| a + o.pixel) / n;
    let spread = obs.iter().map(|o| (o.pixel - c).norm()).sum::<f64>() / n;
    let s = if spread > 1e-9 { 1.0 / spread } else { 1.0 };
    let t = Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);

    let mut a = DMatrix::<f64>::zeros(2 * obs.len(), 4);
    for (k, o) in obs.iter().enumerate() {
        let p = t * o.projection;
        let uv = (t * o.pixel.push(1.0)).xy();
        for (axis, coord) in [(0, uv.x), (1, uv.y)] {
            let row = coord * p.row(2) - p.row(axis);
            let norm = row.norm().max(1e-300);
            for col in 0..4 {
                a[(2 * k + axis, col)] = row[col] / norm;
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("v_t");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let s3 = sv[order[2]];
    let s4 = sv[order[3]];
    let ratio = if s3 > 0.0 { s4 / s3 } else { 1.0 };
    if ratio > 0.99 {
        return Err(TriangulationError::IllConditioned(ratio));
    }
    let h = vt.row(order[3]);
    if h[3].abs() <= 1e-12 * (h[0].abs() + h[1].abs() + h[2].abs()) {
        return Err(TriangulationError::IllConditioned(ratio));
    }
    let p = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(TriangulationError::IllConditioned(ratio));
    }
    Ok((p, ratio))
}

/// Robust (Huber) reprojection cost; `None` when the point is behind a camera.
pub fn robust_cost(obs: &[PointObservation], x: &Vector3<f64>, delta: f64) -> Option<f64> {
    let mut c = 0.0;
    for o in obs {
        let uv = o.project(x)?;
        c += huber_cost((uv - o.pixel).norm_squared(), delta);
    }
    Some(c)
}

/// Reprojection error of `x` in each observation; infinite when behind the camera.
pub fn reprojection_errors(obs: &[PointObservation], x: &Vector3<f64>) -> Vec<f64> {
    obs.iter()
        .map(|o| {
            o.project(x)
                .map_or(f64::INFINITY, |uv| (uv - o.pixel).norm())
        })
        .collect()
}

/// Gradient of [`robust_cost`] with respect to the point.
pub fn cost_gradient(obs: &[PointObservation], x: &Vector3<f64>, delta: f64) -> Vector3<f64> {
    let (_, g) = normal_equations(obs, x, delta);
    2.0 * g
}

fn normal_equations(
    obs: &[PointObservation],
    x: &Vector3<f64>,
    delta: f64,
) -> (Matrix3<f64>, Vector3<f64>) {
    let mut h = Matrix3::<f64>::zeros();
    let mut g = Vector3::<f64>::zeros();
    for o in obs {
        let img = o.image(x);
        if img.z <= 0.0 {
            continue;
        }
        let uv = Vector2::new(img.x / img.z, img.y / img.z);
        let p = &o.projection;
        let mut j = Matrix2x3::<f64>::zeros();
        for c in 0..3 {
            j[(0, c)] = (p[(0, c)] - uv.x * p[(2, c)]) / img.z;
            j[(1, c)] = (p[(1, c)] - uv.y * p[(2, c)]) / img.z;
        }
        let r = uv - o.pixel;
        let w = huber_weight(r.norm_squared(), delta);
        h += w * j.transpose() * j;
        g += w * j.transpose() * r;
    }
    (h, g)
}

/// Levenberg-Marquardt refinement of a point under a Huber loss of width `delta` px.
/// Returns the refined point, the final cost and the iteration count.
pub fn refine_point(
    obs: &[PointObservation],
    start: &Vector3<f64>,
    delta: f64,
    max_iterations: usize,
    rel_tolerance: f64,
) -> (Vector3<f64>, f64, usize) {
    let mut x = *start;
    let Some(mut cost) = robust_cost(obs, &x, delta) else {
        return (x, f64::INFINITY, 0);
    };
    let mut lambda = 1e-3;
    let mut iterations = 0;
    'outer: while iterations < max_iterations && cost > 0.0 {
        iterations += 1;
        let (h, g) = normal_equations(obs, &x, delta);
        if g.norm() < 1e-14 {
            break;
        }
        let mut accepted = false;
        for _ in 0..20 {
            let mut damped = h;
            for d in 0..3 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = x + step;
            match robust_cost(obs, &cand, delta) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    x = cand;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    if rel < rel_tolerance {
                        break 'outer;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    // Near the optimum cost differences drop below rounding; finish with
    // undamped steps judged by the gradient instead.
    for _ in 0..5 {
        let (h, g) = normal_equations(obs, &x, delta);
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else {
            break;
        };
        let cand = x + step;
        let Some(c) = robust_cost(obs, &cand, delta) else {
            break;
        };
        if c > cost * (1.0 + 1e-9) || normal_equations(obs, &cand, delta).1.norm() >= g.norm() {
            break;
        }
        x = cand;
        cost = c.min(cost);
    }
    (x, cost, iterations)
}

/// Largest pairwise angle between the rays from the camera centers to `x`, radians.
pub fn max_ray_angle(obs: &[PointObservation], x: &Vector3<f64>) -> f64 {
    let rays: Vec<Vector3<f64>> = obs.iter().map(|o| x - o.camera_center()).collect();
    let mut best: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(ray_angle(&rays[i], &rays[j]));
        }
    }
    best
}

/// DLT followed by robust refinement, with cheirality check. No admission test.
pub fn triangulate_multiview(
    obs: &[PointObservation],
    cfg: &TriangulationConfig,
) -> Result<TriangulationResult, TriangulationError> {
    let (x0, _) = triangulate_dlt(obs)?;
    let delta = cfg.huber_factor * cfg.max_reproj_px;
    let initial_cost = robust_cost(obs, &x0, delta).unwrap_or(f64::INFINITY);
    let (x, final_cost, iterations) = if initial_cost.is_finite() {
        refine_point(obs, &x0, delta, cfg.max_iterations, cfg.rel_tolerance)
    } else {
        (x0, initial_cost, 0)
    };
    for (k, o) in obs.iter().enumerate() {
        if o.image(&x).z <= 0.0 {
            return Err(TriangulationError::Cheirality(k));
        }
    }
    let reproj_errors = reprojection_errors(obs, &x);
    let mean_reprojection_error = reproj_errors.iter().sum::<f64>() / reproj_errors.len() as f64;
    Ok(TriangulationResult {
        point: Point3D::new(x),
        mean_reprojection_error,
        reproj_errors,
        triangulation_angle: max_ray_angle(obs, &x),
        initial_cost,
        final_cost,
        iterations,
    })
}

/// Mean reprojection error below the limit and ray angle above the minimum.
pub fn admit_track(result: &TriangulationResult, cfg: &TriangulationConfig) -> bool {
    result.mean_reprojection_error < cfg.max_reproj_px
        && result.triangulation_angle > cfg.min_angle_deg.to_radians()
}

/// Triangulates, prunes observations whose individual reprojection error
/// exceeds the limit (worst first, while three or more remain), then applies
/// [`admit_track`].
///
/// Returns the result and the indices of the observations that were kept.
pub fn triangulate_admitted(
    obs: &[PointObservation],
    cfg: &TriangulationConfig,
) -> Result<(TriangulationResult, Vec<usize>), TriangulationError> {
    let mut keep: Vec<usize> = (0..obs.len()).collect();
    loop {
        let sub: Vec<PointObservation> = keep.iter().map(|&k| obs[k]).collect();
        match triangulate_multiview(&sub, cfg) {
            Ok(res) => {
                let (worst, max_err) = res
                    .reproj_errors
                    .iter()
                    .copied()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                if max_err >= cfg.max_reproj_px && keep.len() >= 3 {
                    keep.remove(worst);
                    continue;
                }
                if max_err < cfg.max_reproj_px && admit_track(&res, cfg) {
                    return Ok((res, keep));
                }
                return Err(TriangulationError::Rejected {
                    mean_reproj_px: res.mean_reprojection_error,
                    angle_deg: res.triangulation_angle.to_degrees(),
                });
            }
            Err(e) if keep.len() < 3 => return Err(e),
            Err(_) => {
                let worst = worst_by_leave_one_out(obs, &keep);
                keep.remove(worst);
            }
        }
    }
}

fn worst_by_leave_one_out(obs: &[PointObservation], keep: &[usize]) -> usize {
    let mut best = (0, f64::INFINITY);
    for skip in 0..keep.len() {
        let sub: Vec<PointObservation> = keep
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, &k)| obs[k])
            .collect();
        let Ok((x, _)) = triangulate_dlt(&sub) else {
            continue;
        };
        let e: f64 = reprojection_errors(&sub, &x)
            .iter()
            .map(|v| v.min(1e6))
            .sum();
        if e < best.1 {
            best = (skip, e);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_rotation;

    fn cams() -> Vec<(PoseSE3, CameraIntrinsics)> {
        let k = CameraIntrinsics::centered(800.0, 640, 480);
        vec![
            (
                PoseSE3::new(yaw_rotation(0.0), Vector3::new(0.0, 0.0, 0.0)),
                k,
            ),
            (
                PoseSE3::new(yaw_rotation(0.1), Vector3::new(0.0, -1.0, 0.0)),
                k,
            ),
            (
                PoseSE3::new(yaw_rotation(-0.1), Vector3::new(0.0, 1.0, 0.2)),
                k,
            ),
            (
                PoseSE3::new(yaw_rotation(0.05), Vector3::new(0.5, -0.5, 0.0)),
                k,
            ),
        ]
    }

    fn observe(cams: &[(PoseSE3, CameraIntrinsics)], x: &Vector3<f64>) -> Vec<PointObservation> {
        cams.iter()
            .map(|(p, k)| {
                PointObservation::from_pose(p, k, k.project(&p.world_to_optical(x)).unwrap())
            })
            .collect()
    }

    #[test]
    fn axis_aligned_pair() {
        // Optical frames aligned with the world, f = 1000, centers at origin and (1, 0, 0).
        let k = Matrix3::new(1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0);
        let x = Vector3::new(0.5, 0.0, 5.0);
        let obs: Vec<PointObservation> = [0.0, 1.0]
            .iter()
            .map(|cx| {
                let mut rt = Matrix3x4::identity();
                rt[(0, 3)] = -cx;
                let p = k * rt;
                let h = p * x.push(1.0);
                PointObservation::new(p, Vector2::new(h.x / h.z, h.y / h.z))
            })
            .collect();
        let res = triangulate_multiview(&obs, &TriangulationConfig::default()).unwrap();
        assert!((res.point.position - x).norm() < 1e-8);
        assert!(res.mean_reprojection_error < 1e-9);
    }

    #[test]
    fn exact_recovery_noise_free() {
        let x = Vector3::new(10.0, 0.5, 0.3);
        let obs = observe(&cams()[..3], &x);
        let res = triangulate_multiview(&obs, &TriangulationConfig::default()).unwrap();
        assert!((res.point.position - x).norm() < 1e-8);
        assert!(admit_track(&res, &TriangulationConfig::default()));
    }

    #[test]
    fn single_observation_is_rejected() {
        let obs = observe(&cams()[..1], &Vector3::new(10.0, 0.0, 0.0));
        assert_eq!(
            triangulate_multiview(&obs, &TriangulationConfig::default()).unwrap_err(),
            TriangulationError::TooFewObservations(1)
        );
    }

    #[test]
    fn point_behind_camera() {
        let c = cams();
        // Camera 1 turned around to face west.
        let back = (
            PoseSE3::new(yaw_rotation(std::f64::consts::PI), c[1].0.translation),
            c[1].1,
        );
        let x = Vector3::new(10.0, 0.5, 0.3);
        let mut obs = observe(&c[..1], &x);
        let h = back.0.projection_matrix(&back.1) * x.push(1.0);
        obs.push(PointObservation::from_pose(
            &back.0,
            &back.1,
            Vector2::new(h.x / h.z, h.y / h.z),
        ));
        assert!(matches!(
            triangulate_multiview(&obs, &TriangulationConfig::default()),
            Err(TriangulationError::Cheirality(_))
        ));
    }

    #[test]
    fn identical_centers_are_ill_conditioned() {
        let k = CameraIntrinsics::centered(800.0, 640, 480);
        let p = PoseSE3::identity();
        let o = PointObservation::from_pose(&p, &k, Vector2::new(330.0, 240.0));
        assert!(matches!(
            triangulate_dlt(&[o, o]),
            Err(TriangulationError::IllConditioned(_))
        ));
    }

    #[test]
    fn admission_thresholds() {
        let cfg = TriangulationConfig::default();
        let mut r = TriangulationResult {
            point: Point3D::new(Vector3::zeros()),
            reproj_errors: vec![2.0],
            mean_reprojection_error: 2.0,
            triangulation_angle: 10f64.to_radians(),
            initial_cost: 0.0,
            final_cost: 0.0,
            iterations: 0,
        };
        assert!(admit_track(&r, &cfg));
        r.mean_reprojection_error = 20.0;
        assert!(!admit_track(&r, &cfg));
        r.mean_reprojection_error = 2.0;
        r.triangulation_angle = 0.5f64.to_radians();
        assert!(!admit_track(&r, &cfg));
    }

    #[test]
    fn gross_outlier_is_dropped() {
        let x = Vector3::new(10.0, 0.5, 0.3);
        let mut obs = observe(&cams(), &x);
        obs[1].pixel += Vector2::new(60.0, -40.0);
        let (res, kept) = triangulate_admitted(&obs, &TriangulationConfig::default()).unwrap();
        assert_eq!(kept, vec![0, 2, 3]);
        assert!((res.point.position - x).norm() < 1e-6);
    }
}
