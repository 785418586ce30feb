//! Robust two-view epipolar geometry.
//!
//! Points are handled in normalized camera coordinates (intrinsics removed) as
//! homogeneous 3-vectors with unit last component. The essential matrix maps
//! them as `x_j^T E x_i = 0` with `E = [t]x R` and `x_j ~ R x_i + t` in optical
//! frames.

mod five_point;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector2, Vector3, SVD};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::five_point::five_point;
use crate::geometry::skew;
pub use crate::loss::tukey_loss;
use crate::model::{CameraIntrinsics, KeypointTable, MatchPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoViewError {
    #[error("insufficient matches: {0} < 5")]
    InsufficientMatches(usize),
    #[error("essential matrix estimation failed: every sample was degenerate")]
    EstimationFailed,
    #[error(
        "cheirality ambiguous: best candidate has {best} of {needed} required points in front"
    )]
    CheiralityAmbiguous { best: usize, needed: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TwoViewConfig {
    /// Sampson distance below which a match is an inlier, normalized units.
    pub inlier_threshold: f64,
    /// Tukey cutoff; `None` uses three times the inlier threshold.
    pub tukey_cutoff: Option<f64>,
    pub max_iterations: usize,
    pub confidence: f64,
    /// Homography-to-essential inlier ratio above which a pair is low-parallax.
    pub homography_ratio: f64,
}

impl Default for TwoViewConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 4e-3,
            tukey_cutoff: None,
            max_iterations: 2000,
            confidence: 0.99,
            homography_ratio: 0.9,
        }
    }
}

impl TwoViewConfig {
    pub fn cutoff(&self) -> f64 {
        self.tukey_cutoff.unwrap_or(3.0 * self.inlier_threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialEstimate {
    /// Unit Frobenius norm, singular values (s, s, 0).
    pub e: Matrix3<f64>,
    pub inlier_indices: Vec<usize>,
    pub mean_robust_residual: f64,
    pub homography_inlier_ratio: f64,
    pub low_parallax: bool,
}

impl EssentialEstimate {
    pub fn inlier_ratio(&self, n_matches: usize) -> f64 {
        if n_matches == 0 {
            0.0
        } else {
            self.inlier_indices.len() as f64 / n_matches as f64
        }
    }
}

/// Relative motion `x_j ~ R x_i + t` between two optical frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub cheirality_count: usize,
}

/// Sampson distance of the epipolar constraint `x_j^T E x_i`.
pub fn epipolar_residual(e: &Matrix3<f64>, xi: &Vector3<f64>, xj: &Vector3<f64>) -> f64 {
    let ex = e * xi;
    let etx = e.transpose() * xj;
    let alg = xj.dot(&ex);
    let g = ex.x * ex.x + ex.y * ex.y + etx.x * etx.x + etx.y * etx.y;
    if g <= 0.0 {
        return if alg == 0.0 { 0.0 } else { f64::INFINITY };
    }
    alg.abs() / g.sqrt()
}

/// Lifts the pixel coordinates of a match pair into normalized homogeneous points.
/// Matches whose keypoints are missing are skipped; the returned index list
/// refers to positions in `pair.matches`.
pub fn normalized_matches(
    pair: &MatchPair,
    keypoints: &KeypointTable,
    ki: &CameraIntrinsics,
    kj: &CameraIntrinsics,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<usize>) {
    let mut xi = Vec::with_capacity(pair.matches.len());
    let mut xj = Vec::with_capacity(pair.matches.len());
    let mut idx = Vec::with_capacity(pair.matches.len());
    for (k, m) in pair.matches.iter().enumerate() {
        let (Some(a), Some(b)) = (
            keypoints.get(pair.view_a, m.kp_a),
            keypoints.get(pair.view_b, m.kp_b),
        ) else {
            continue;
        };
        xi.push(ki.normalize(&a).push(1.0));
        xj.push(kj.normalize(&b).push(1.0));
        idx.push(k);
    }
    (xi, xj, idx)
}

fn score(
    e: &Matrix3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    thr: f64,
    c: f64,
) -> (f64, Vec<usize>) {
    let mut cost = 0.0;
    let mut inliers = Vec::new();
    for (k, (a, b)) in xi.iter().zip(xj).enumerate() {
        let r = epipolar_residual(e, a, b);
        cost += tukey_loss(r, c);
        if r < thr {
            inliers.push(k);
        }
    }
    (cost, inliers)
}

/// Closest essential matrix (equal nonzero singular values), unit Frobenius norm.
pub fn project_to_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let e = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * vt;
    e / e.norm()
}

fn smallest_eigenvector(ata: DMatrix<f64>) -> nalgebra::DVector<f64> {
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    eig.eigenvectors.column(imin).into_owned()
}

fn hartley(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |acc, p| acc + p.xy()) / n;
    let d = points.iter().map(|p| (p.xy() - c).norm()).sum::<f64>() / n;
    let s = if d > 0.0 {
        std::f64::consts::SQRT_2 / d
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Linear eight-point fit over at least eight correspondences, projected onto
/// the essential manifold.
pub fn eight_point(xi: &[Vector3<f64>], xj: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    if xi.len() < 8 {
        return None;
    }
    let ti = hartley(xi);
    let tj = hartley(xj);
    let mut a = DMatrix::<f64>::zeros(xi.len(), 9);
    for (k, (p, q)) in xi.iter().zip(xj).enumerate() {
        let p = ti * p;
        let q = tj * q;
        for r in 0..3 {
            for c in 0..3 {
                a[(k, r * 3 + c)] = q[r] * p[c];
            }
        }
    }
    let v = smallest_eigenvector(a.transpose() * &a);
    let f = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = tj.transpose() * f * ti;
    if !e.iter().all(|x| x.is_finite()) || e.norm() == 0.0 {
        return None;
    }
    Some(project_to_essential(&e))
}

fn homography_dlt(xi: &[Vector3<f64>], xj: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    let mut a = DMatrix::<f64>::zeros(2 * xi.len(), 9);
    for (k, (p, q)) in xi.iter().zip(xj).enumerate() {
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let r0 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        let r1 = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let h = smallest_eigenvector(a.transpose() * &a);
    let h = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    h.iter().all(|x| x.is_finite()).then_some(h)
}

fn homography_inliers(
    h: &Matrix3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    thr: f64,
) -> usize {
    xi.iter()
        .zip(xj)
        .filter(|(p, q)| {
            let m = h * *p;
            if m.z.abs() < 1e-12 {
                return false;
            }
            ((m.xy() / m.z) - q.xy()).norm() < thr
        })
        .count()
}

fn required_iterations(inlier_ratio: f64, sample_size: i32, confidence: f64) -> usize {
    let w = inlier_ratio.powi(sample_size);
    if w >= 1.0 - 1e-12 {
        return 1;
    }
    if w <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - w).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Best homography inlier count found by a 4-point RANSAC.
pub fn homography_support<R: Rng + ?Sized>(
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    threshold: f64,
    max_iterations: usize,
    confidence: f64,
    rng: &mut R,
) -> usize {
    let n = xi.len();
    if n < 4 {
        return 0;
    }
    let mut best = 0;
    let mut needed = max_iterations;
    let mut iter = 0;
    while iter < needed.min(max_iterations) {
        iter += 1;
        let s = sample(rng, n, 4);
        let si: Vec<Vector3<f64>> = s.iter().map(|k| xi[k]).collect();
        let sj: Vec<Vector3<f64>> = s.iter().map(|k| xj[k]).collect();
        let Some(h) = homography_dlt(&si, &sj) else {
            continue;
        };
        let c = homography_inliers(&h, xi, xj, threshold);
        if c > best {
            best = c;
            needed = required_iterations(best as f64 / n as f64, 4, confidence);
        }
    }
    best
}

/// Robust essential matrix estimation.
///
/// Minimal five-point samples are scored by the summed Tukey loss of their
/// Sampson distances; the winning model is refit on its inliers with the
/// eight-point method as long as that keeps or grows the inlier set.
pub fn estimate_essential_ransac<R: Rng + ?Sized>(
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
    cfg: &TwoViewConfig,
    rng: &mut R,
) -> Result<EssentialEstimate, TwoViewError> {
    let n = xi.len();
    if n < 5 {
        return Err(TwoViewError::InsufficientMatches(n));
    }
    let thr = cfg.inlier_threshold;
    let c = cfg.cutoff();

    let mut best: Option<(f64, Vec<usize>, Matrix3<f64>)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let s = sample(rng, n, 5);
        let si: [Vector3<f64>; 5] = std::array::from_fn(|k| xi[s.index(k)]);
        let sj: [Vector3<f64>; 5] = std::array::from_fn(|k| xj[s.index(k)]);
        for e in five_point(&si, &sj) {
            let (cost, inliers) = score(&e, xi, xj, thr, c);
            let better = match &best {
                None => true,
                Some((bc, bi, _)) => cost < *bc || (cost == *bc && inliers.len() > bi.len()),
            };
            if better {
                needed = required_iterations(inliers.len() as f64 / n as f64, 5, cfg.confidence);
                best = Some((cost, inliers, e));
            }
        }
    }
    let Some((mut cost, mut inliers, mut e)) = best else {
        return Err(TwoViewError::EstimationFailed);
    };

    // Local optimization on the inlier set.
    for _ in 0..3 {
        let si: Vec<Vector3<f64>> = inliers.iter().map(|&k| xi[k]).collect();
        let sj: Vec<Vector3<f64>> = inliers.iter().map(|&k| xj[k]).collect();
        let Some(refit) = eight_point(&si, &sj) else {
            break;
        };
        let (c2, i2) = score(&refit, xi, xj, thr, c);
        if i2.len() >= inliers.len() && c2 <= cost {
            let improved = c2 < cost || i2.len() > inliers.len();
            cost = c2;
            inliers = i2;
            e = refit;
            if !improved {
                break;
            }
        } else {
            break;
        }
    }

    let h_support = homography_support(
        xi,
        xj,
        thr,
        cfg.max_iterations.min(500),
        cfg.confidence,
        rng,
    );
    let ratio = if inliers.is_empty() {
        0.0
    } else {
        h_support as f64 / inliers.len() as f64
    };
    Ok(EssentialEstimate {
        e: project_to_essential(&e),
        mean_robust_residual: cost / n as f64,
        low_parallax: ratio > cfg.homography_ratio,
        homography_inlier_ratio: ratio,
        inlier_indices: inliers,
    })
}

/// Depths `(d_i, d_j)` with `d_j x_j ~ R d_i x_i + t`; `None` for parallel rays.
pub(crate) fn two_view_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    xi: &Vector3<f64>,
    xj: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let a = r * xi;
    let b = -xj;
    // minimize |d_i a + d_j b + t|
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    let ab = a.dot(&b);
    let det = aa * bb - ab * ab;
    if det <= 1e-12 * aa * bb {
        return None;
    }
    let at = a.dot(t);
    let bt = b.dot(t);
    let di = (-at * bb + bt * ab) / det;
    let dj = (-bt * aa + at * ab) / det;
    Some((di, dj))
}

/// Recovers `(R, t)` from an essential matrix by cheirality voting over the inliers.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    xi: &[Vector3<f64>],
    xj: &[Vector3<f64>],
) -> Result<RelativePose, TwoViewError> {
    let svd = SVD::new(*e, true, true);
    let mut u = svd.u.unwrap();
    let mut vt = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();

    let needed = xi.len().div_ceil(2).max(1);
    let mut best: Option<RelativePose> = None;
    for (r, t) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        let count = xi
            .iter()
            .zip(xj)
            .filter(|(a, b)| matches!(two_view_depths(&r, &t, a, b), Some((di, dj)) if di > 0.0 && dj > 0.0))
            .count();
        if best.as_ref().is_none_or(|b| count > b.cheirality_count) {
            best = Some(RelativePose {
                rotation: r,
                translation: t,
                cheirality_count: count,
            });
        }
    }
    let best = best.unwrap();
    if best.cheirality_count < needed || best.cheirality_count == 0 {
        return Err(TwoViewError::CheiralityAmbiguous {
            best: best.cheirality_count,
            needed,
        });
    }
    Ok(best)
}

/// Essential matrix of a relative pose, unit Frobenius norm.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    let e = skew(t) * r;
    e / e.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(
        n: usize,
        seed: u64,
    ) -> (
        Matrix3<f64>,
        Vector3<f64>,
        Vec<Vector3<f64>>,
        Vec<Vector3<f64>>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = so3_exp(&Vector3::new(0.05, -0.1, 0.08));
        let t = Vector3::new(0.8, 0.1, -0.2);
        let mut xi = Vec::new();
        let mut xj = Vec::new();
        while xi.len() < n {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(4.0..10.0),
            );
            let q = r * p + t;
            if q.z <= 0.0 {
                continue;
            }
            xi.push(p / p.z);
            xj.push(q / q.z);
        }
        (r, t, xi, xj)
    }

    fn same_up_to_sign(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let a = a / a.norm();
        let b = b / b.norm();
        (a - b).norm().min((a + b).norm())
    }

    #[test]
    fn residual_zero_on_epipolar_line() {
        let e = skew(&Vector3::new(1.0, 0.0, 0.0));
        let r = epipolar_residual(
            &e,
            &Vector3::new(0.2, 0.3, 1.0),
            &Vector3::new(0.5, 0.3, 1.0),
        );
        assert_eq!(r, 0.0);
        let r = epipolar_residual(
            &e,
            &Vector3::new(0.2, 0.3, 1.0),
            &Vector3::new(0.5, 0.4, 1.0),
        );
        assert!(r > 0.0);
    }

    #[test]
    fn four_matches_is_insufficient() {
        let (_, _, xi, xj) = scene(4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err =
            estimate_essential_ransac(&xi, &xj, &TwoViewConfig::default(), &mut rng).unwrap_err();
        assert_eq!(err, TwoViewError::InsufficientMatches(4));
    }

    #[test]
    fn clean_scene_recovers_essential() {
        let (r, t, xi, xj) = scene(50, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est = estimate_essential_ransac(&xi, &xj, &TwoViewConfig::default(), &mut rng).unwrap();
        let truth = essential_from_pose(&r, &t);
        assert!(same_up_to_sign(&est.e, &truth) < 1e-6);
        assert_eq!(est.inlier_indices.len(), 50);
        let sv = est.e.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!((s[0] - s[1]).abs() < 1e-6 && s[2] < 1e-9);
    }

    #[test]
    fn decompose_recovers_pose() {
        let (r, t, xi, xj) = scene(40, 3);
        let e = essential_from_pose(&r, &t);
        let rel = decompose_essential(&e, &xi, &xj).unwrap();
        assert!((rel.rotation - r).norm() < 1e-6);
        assert!((rel.translation - t.normalize()).norm() < 1e-6);
        assert_eq!(rel.cheirality_count, 40);
    }

    #[test]
    fn decompose_identity_rotation_x_translation() {
        let t = Vector3::new(1.0, 0.0, 0.0);
        let pts = [
            Vector3::new(0.3, 0.1, 5.0),
            Vector3::new(-1.0, 0.4, 7.0),
            Vector3::new(0.5, -0.5, 3.0),
        ];
        let xi: Vec<_> = pts.iter().map(|p| p / p.z).collect();
        let xj: Vec<_> = pts.iter().map(|p| (p + t) / p.z).collect();
        let rel = decompose_essential(&skew(&t), &xi, &xj).unwrap();
        assert!((rel.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!((rel.translation - t).norm() < 1e-9);
    }

    #[test]
    fn zero_parallax_single_match_is_ambiguous() {
        // identical rays in both views: no candidate puts the point at finite positive depth
        let e = skew(&Vector3::new(1.0, 0.0, 0.0));
        let x = vec![Vector3::new(1.0, 0.0, 1.0)];
        let err = decompose_essential(&e, &x, &x).unwrap_err();
        assert!(matches!(err, TwoViewError::CheiralityAmbiguous { .. }));
    }
}
