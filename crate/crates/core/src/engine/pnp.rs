//! Absolute pose from 2D-3D correspondences: P3P minimal solver, RANSAC and
//! Levenberg-Marquardt refinement with a tangent-space covariance.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6, SVD};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::ops::AddAssign;

use crate::ba::{
    motion_prior_residual, reprojection_jacobian, rotation_prior_jacobian,
    translation_prior_jacobian, translation_prior_residual,
};
use crate::geometry::so3_exp;
use crate::model::{CameraIntrinsics, PoseSE3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("RANSAC found {inliers} inliers, {needed} required")]
    RansacFailure { inliers: usize, needed: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PnpConfig {
    /// Inlier threshold on reprojection error, pixels.
    pub threshold_px: f64,
    pub min_inliers: usize,
    pub max_iterations: usize,
    pub confidence: f64,
    pub refine_iterations: usize,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            threshold_px: 8.0,
            min_inliers: 12,
            max_iterations: 1000,
            confidence: 0.999,
            refine_iterations: 50,
        }
    }
}

/// Prior terms added to the refinement: the horizontal position term
/// `weight * (C.xy - target)` and edge terms toward registered neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    pub target: Vector2<f64>,
    pub weight: f64,
    /// Alternative starting pose for the refinement.
    pub initial_pose: Option<PoseSE3>,
    pub neighbors: Vec<NeighborPrior>,
}

/// Rotation and relative-motion prior terms between the view being
/// registered (`j`) and a fixed registered view (`i`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPrior {
    pub pose: PoseSE3,
    /// Target for `R_j R_i^T`.
    pub rotation_target: Matrix3<f64>,
    pub rotation_weight: f64,
    /// Target for `C_j - C_i`.
    pub motion_target: Vector3<f64>,
    pub motion_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub pose: PoseSE3,
    /// Indices into the correspondence list.
    pub inliers: Vec<usize>,
    pub inlier_count: usize,
    /// Covariance over `(rotation perturbation, center)`.
    pub covariance: Matrix6<f64>,
    pub rms_px: f64,
}

/// Rotation and translation mapping `src` onto `dst` in the least-squares sense.
pub fn rigid_fit(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    Some((r, cd - r * cs))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots of a polynomial given in ascending coefficient order.
fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-12 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::zeros(deg, deg);
    for i in 0..deg {
        companion[(0, i)] = -p[deg - 1 - i] / p[deg];
        if i + 1 < deg {
            companion[(i + 1, i)] = 1.0;
        }
    }
    let dp: Vec<f64> = (1..=deg).map(|k| k as f64 * p[k]).collect();
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let d = poly_eval(&dp, x);
                if d.abs() > 0.0 {
                    x -= poly_eval(&p[..=deg], x) / d;
                }
            }
            x
        })
        .collect()
}

/// Camera poses consistent with three bearing/point pairs.
///
/// With depths `s2 = u s1`, `s3 = v s1` the law of cosines on the three
/// point distances gives two conics in `(u, v)`; eliminating `u` leaves a
/// quartic in `v`.
pub fn p3p(bearings: &[Vector3<f64>; 3], points: &[Vector3<f64>; 3]) -> Vec<PoseSE3> {
    let f: Vec<Vector3<f64>> = bearings.iter().map(|b| b.normalize()).collect();
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);
    let k = (a2 - c2) / b2;
    let q = [1.0, -2.0 * cb, 1.0];
    let n = [1.0 + k, -2.0 * k * cb, k - 1.0];
    let d = [2.0 * cg, -2.0 * ca];

    let d2 = poly_mul(&d, &d);
    let n2 = poly_mul(&n, &n);
    let nd = poly_mul(&n, &d);
    let qd2 = poly_mul(&q, &d2);
    let mut quartic = vec![0.0; 5];
    for (i, c) in d2.iter().enumerate() {
        quartic[i] += b2 * c;
    }
    for (i, c) in n2.iter().enumerate() {
        quartic[i] += b2 * c;
    }
    for (i, c) in nd.iter().enumerate() {
        quartic[i] -= 2.0 * b2 * cg * c;
    }
    for (i, c) in qd2.iter().enumerate() {
        quartic[i] -= c2 * c;
    }

    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        let dv = poly_eval(&d, v);
        if dv.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&n, v) / dv;
        let denom = 1.0 + u * u - 2.0 * u * cg;
        if denom <= 0.0 || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (c2 / denom).sqrt();
        let cam = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        if let Some((r, t)) = rigid_fit(points, &cam) {
            poses.push(PoseSE3::from_world_to_optical(&r, &t));
        }
    }
    poses
}

fn reprojection_error(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    x: &Vector3<f64>,
    uv: &Vector2<f64>,
) -> f64 {
    k.project(&pose.world_to_optical(x))
        .map_or(f64::INFINITY, |p| (p - uv).norm())
}

fn support(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    thr: f64,
) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut cost = 0.0;
    for (i, (x, uv)) in points.iter().zip(pixels).enumerate() {
        let e = reprojection_error(k, pose, x, uv);
        if e < thr {
            inliers.push(i);
            cost += e * e;
        } else {
            cost += thr * thr;
        }
    }
    (inliers, cost)
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p = inlier_ratio.powi(3);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Cost, normal matrix and gradient of the refinement objective at `pose`.
/// Returns `None` if any point is behind the camera.
fn linearize(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    prior: Option<&PosePrior>,
) -> Option<(f64, f64, Matrix6<f64>, Vector6<f64>)> {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    let mut reproj = 0.0;
    for (x, uv) in points.iter().zip(pixels) {
        let j = reprojection_jacobian(k, pose, x, uv)?;
        let mut jj = nalgebra::Matrix2x6::zeros();
        jj.fixed_view_mut::<2, 3>(0, 0).copy_from(&j.d_rotation);
        jj.fixed_view_mut::<2, 3>(0, 3).copy_from(&j.d_center);
        h += jj.transpose() * jj;
        g += jj.transpose() * j.residual;
        reproj += j.residual.norm_squared();
    }
    let mut total = reproj;
    if let Some(p) = prior {
        let r = translation_prior_residual(&pose.translation, &p.target, p.weight);
        let jc = translation_prior_jacobian(p.weight);
        let mut jj = nalgebra::Matrix2x6::zeros();
        jj.fixed_view_mut::<2, 3>(0, 3).copy_from(&jc);
        h += jj.transpose() * jj;
        g += jj.transpose() * r;
        total += r.norm_squared();
        for nb in &p.neighbors {
            let (r, _, d_j) = rotation_prior_jacobian(
                &nb.pose.rotation,
                &pose.rotation,
                &nb.rotation_target,
                nb.rotation_weight,
            );
            h.fixed_view_mut::<3, 3>(0, 0)
                .add_assign(d_j.transpose() * d_j);
            g.fixed_rows_mut::<3>(0).add_assign(d_j.transpose() * r);
            total += r.norm_squared();
            let w = nb.motion_weight;
            let r = motion_prior_residual(
                &pose.translation,
                &nb.pose.translation,
                &nb.motion_target,
                w,
            );
            h.fixed_view_mut::<3, 3>(3, 3)
                .add_assign(Matrix3::identity() * (w * w));
            g.fixed_rows_mut::<3>(3).add_assign(r * w);
            total += r.norm_squared();
        }
    }
    Some((total, reproj, h, g))
}

fn retract(pose: &PoseSE3, delta: &Vector6<f64>) -> PoseSE3 {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let c = Vector3::new(delta[3], delta[4], delta[5]);
    PoseSE3::new(so3_exp(&w) * pose.rotation, pose.translation + c)
}

/// Levenberg-Marquardt on the squared reprojection error of the given
/// correspondences, plus the optional position prior. Returns the pose and
/// its final cost.
pub fn refine_pose(
    k: &CameraIntrinsics,
    initial: &PoseSE3,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    prior: Option<&PosePrior>,
    max_iterations: usize,
) -> Option<(PoseSE3, f64)> {
    let mut pose = *initial;
    let (mut cost, _, mut h, mut g) = linearize(k, &pose, points, pixels, prior)?;
    let mut lambda = 1e-4;
    let mut nu = 2.0;
    for _ in 0..max_iterations {
        if g.amax() < 1e-12 || cost <= 1e-24 {
            break;
        }
        let mut a = h;
        for i in 0..6 {
            a[(i, i)] += lambda * h[(i, i)].clamp(1e-6, 1e32);
        }
        let Some(step) = a.cholesky().map(|c| c.solve(&(-g))) else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };
        let candidate = retract(&pose, &step);
        match linearize(k, &candidate, points, pixels, prior) {
            Some((c2, _, h2, g2)) if c2 <= cost => {
                let rel = (cost - c2) / cost.max(1e-300);
                let predicted = -(step.dot(&g) + 0.5 * step.dot(&(h * step)));
                let rho = if predicted > 0.0 {
                    (cost - c2) / (2.0 * predicted)
                } else {
                    1.0
                };
                lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                pose = candidate;
                cost = c2;
                h = h2;
                g = g2;
                if rel < 1e-12 {
                    break;
                }
            }
            _ => {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
    }
    pose.rotation = crate::geometry::orthonormalize(&pose.rotation);
    Some((pose, cost))
}

/// `sigma^2 (J^T J)^-1` over the pose tangent space, with `sigma^2` the mean
/// squared residual per scalar component.
pub fn pose_covariance(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    prior: Option<&PosePrior>,
) -> Option<Matrix6<f64>> {
    let (_, reproj, h, _) = linearize(k, pose, points, pixels, prior)?;
    let sigma2 = reproj / (2 * points.len()).max(1) as f64;
    let inv = h.try_inverse()?;
    let cov = (inv + inv.transpose()) * (0.5 * sigma2);
    Some(cov)
}

/// Trace of a pose covariance.
pub fn pose_uncertainty(covariance: &Matrix6<f64>) -> f64 {
    covariance.trace()
}

/// RANSAC over P3P samples, then refinement on the inliers.
pub fn register_view_pnp<R: Rng + ?Sized>(
    k: &CameraIntrinsics,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    prior: Option<&PosePrior>,
    cfg: &PnpConfig,
    rng: &mut R,
) -> Result<PnpResult, PnpError> {
    let n = points.len();
    if n < 4 {
        return Err(PnpError::InsufficientCorrespondences(n));
    }
    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|uv| k.normalize(uv).push(1.0)).collect();
    let thr = cfg.threshold_px;
    let mut best: Option<(usize, f64, PoseSE3)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let s = sample(rng, n, 3);
        let b = [
            bearings[s.index(0)],
            bearings[s.index(1)],
            bearings[s.index(2)],
        ];
        let x = [points[s.index(0)], points[s.index(1)], points[s.index(2)]];
        for pose in p3p(&b, &x) {
            let (inliers, cost) = support(k, &pose, points, pixels, thr);
            let better = match &best {
                None => true,
                Some((bn, bc, _)) => inliers.len() > *bn || (inliers.len() == *bn && cost < *bc),
            };
            if better {
                needed = required_iterations(inliers.len() as f64 / n as f64, cfg.confidence);
                best = Some((inliers.len(), cost, pose));
            }
        }
    }
    let Some((_, _, mut pose)) = best else {
        return Err(PnpError::RansacFailure {
            inliers: 0,
            needed: cfg.min_inliers,
        });
    };

    let mut inliers = support(k, &pose, points, pixels, thr).0;
    for _ in 0..3 {
        if inliers.len() < 4 {
            break;
        }
        let xi: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
        let ui: Vec<Vector2<f64>> = inliers.iter().map(|&i| pixels[i]).collect();
        let mut starts = vec![pose];
        if let Some(p) = prior.and_then(|p| p.initial_pose) {
            starts.push(p);
        }
        let refined = starts
            .iter()
            .filter_map(|s| refine_pose(k, s, &xi, &ui, prior, cfg.refine_iterations))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((p, _)) = refined else { break };
        let next = support(k, &p, points, pixels, thr).0;
        let changed = next != inliers;
        pose = p;
        inliers = next;
        if !changed {
            break;
        }
    }
    if inliers.len() < cfg.min_inliers {
        return Err(PnpError::RansacFailure {
            inliers: inliers.len(),
            needed: cfg.min_inliers,
        });
    }
    let xi: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
    let ui: Vec<Vector2<f64>> = inliers.iter().map(|&i| pixels[i]).collect();
    let covariance = pose_covariance(k, &pose, &xi, &ui, prior)
        .unwrap_or_else(|| Matrix6::from_diagonal_element(f64::INFINITY));
    let sq: f64 = xi
        .iter()
        .zip(&ui)
        .map(|(x, uv)| reprojection_error(k, &pose, x, uv).powi(2))
        .sum();
    Ok(PnpResult {
        pose,
        inlier_count: inliers.len(),
        inliers,
        covariance,
        rms_px: (sq / xi.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (
        CameraIntrinsics,
        PoseSE3,
        Vec<Vector3<f64>>,
        Vec<Vector2<f64>>,
    ) {
        let k = CameraIntrinsics::centered(800.0, 640, 480);
        let pose = PoseSE3::new(
            so3_exp(&Vector3::new(0.05, -0.1, 0.7)),
            Vector3::new(-2.0, 1.0, 1.5),
        );
        let mut pts = Vec::new();
        let mut px = Vec::new();
        while pts.len() < n {
            let pc = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(4.0..12.0),
            );
            let x = pose.rotation * crate::geometry::optical_from_body().transpose() * pc
                + pose.translation;
            if let Some(uv) = k.project(&pose.world_to_optical(&x)) {
                if uv.x > 0.0 && uv.x < 640.0 && uv.y > 0.0 && uv.y < 480.0 {
                    pts.push(x);
                    px.push(uv);
                }
            }
        }
        (k, pose, pts, px)
    }

    #[test]
    fn p3p_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, pose, pts, px) = scene(3, &mut rng);
        let b: [Vector3<f64>; 3] = std::array::from_fn(|i| k.normalize(&px[i]).push(1.0));
        let x: [Vector3<f64>; 3] = std::array::from_fn(|i| pts[i]);
        let sols = p3p(&b, &x);
        assert!(!sols.is_empty());
        let best = sols
            .iter()
            .map(|s| {
                (s.rotation - pose.rotation).norm() + (s.translation - pose.translation).norm()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-8, "{best}");
    }

    #[test]
    fn noise_free_registration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (k, pose, pts, px) = scene(30, &mut rng);
        let r = register_view_pnp(&k, &pts, &px, None, &PnpConfig::default(), &mut rng).unwrap();
        assert_eq!(r.inlier_count, 30);
        assert!((r.pose.translation - pose.translation).norm() < 1e-6);
        assert!(
            crate::geometry::so3_log(&(r.pose.rotation * pose.rotation.transpose())).norm() < 1e-8
        );
    }

    #[test]
    fn outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, _, pts, mut px) = scene(40, &mut rng);
        for uv in px.iter_mut().take(10) {
            *uv += Vector2::new(60.0 + rng.random_range(0.0..100.0), -45.0);
        }
        let r = register_view_pnp(&k, &pts, &px, None, &PnpConfig::default(), &mut rng).unwrap();
        assert_eq!(r.inliers, (10..40).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (k, _, pts, px) = scene(3, &mut rng);
        assert_eq!(
            register_view_pnp(&k, &pts, &px, None, &PnpConfig::default(), &mut rng),
            Err(PnpError::InsufficientCorrespondences(3))
        );
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, _, pts, mut px) = scene(40, &mut rng);
        for uv in px.iter_mut() {
            *uv += Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let r = register_view_pnp(&k, &pts, &px, None, &PnpConfig::default(), &mut rng).unwrap();
        let c = r.covariance;
        assert!((c - c.transpose()).amax() < 1e-8);
        let eig = c.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > -1e-8));
        assert!(pose_uncertainty(&c) > 0.0);
    }

    #[test]
    fn uncertainty_is_trace() {
        assert_eq!(pose_uncertainty(&Matrix6::zeros()), 0.0);
        assert_eq!(pose_uncertainty(&Matrix6::identity()), 6.0);
        assert_eq!(pose_uncertainty(&(Matrix6::identity() * 4.0)), 24.0);
    }
}
