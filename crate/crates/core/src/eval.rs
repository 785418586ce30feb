//! Evaluation metrics: similarity alignment, positional RMSE, coverage and
//! reprojection error.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::model::{AltitudeClass, PoseSE3, Reconstruction, ViewId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("alignment needs at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: points are collinear or coincident")]
    Degenerate,
    #[error("no view has both an estimate and ground truth")]
    EmptyIntersection,
    #[error("no triangulated observations")]
    NoObservations,
}

/// `y = s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }

    /// Applies the transform to a camera pose.
    pub fn apply_pose(&self, pose: &PoseSE3) -> PoseSE3 {
        PoseSE3::new(self.rotation * pose.rotation, self.apply(&pose.translation))
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Least-squares similarity taking `estimated` onto `ground_truth`, reflection excluded.
pub fn align_umeyama(
    estimated: &[Vector3<f64>],
    ground_truth: &[Vector3<f64>],
) -> Result<SimilarityTransform, EvalError> {
    assert_eq!(
        estimated.len(),
        ground_truth.len(),
        "point sets differ in length"
    );
    let n = estimated.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints(n));
    }
    let mx = centroid(estimated);
    let my = centroid(ground_truth);
    let mut cov = Matrix3::zeros();
    let mut cxx = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in estimated.iter().zip(ground_truth) {
        let dx = x - mx;
        cov += (y - my) * dx.transpose();
        cxx += dx * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n as f64;
    var_x /= n as f64;

    let mut spread = cxx
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect::<Vec<_>>();
    spread.sort_by(|a, b| b.total_cmp(a));
    if spread[0] <= 0.0 || spread[1] <= 1e-20 * spread[0].max(1.0) || spread[1] <= 1e-12 * spread[0]
    {
        return Err(EvalError::Degenerate);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let d = svd.singular_values;
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let (imin, _) = d
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        s[(imin, imin)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = (Matrix3::from_diagonal(&d) * s).trace() / var_x;
    let translation = my - scale * rotation * mx;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// `(min, rmse, max)` of the per-point distances.
pub fn positional_rmse(
    aligned: &[Vector3<f64>],
    ground_truth: &[Vector3<f64>],
) -> Result<(f64, f64, f64), EvalError> {
    if aligned.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }
    let errors: Vec<f64> = aligned
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| (a - b).norm())
        .collect();
    Ok(error_stats(&errors))
}

fn error_stats(errors: &[f64]) -> (f64, f64, f64) {
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = errors.iter().copied().fold(0.0, f64::max);
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    (min, rmse, max)
}

/// Fraction of input views with an estimated pose.
pub fn coverage(n_estimated: usize, n_input: usize) -> f64 {
    if n_input == 0 {
        return 0.0;
    }
    n_estimated as f64 / n_input as f64
}

/// Mean squared reprojection error over all active observations of
/// triangulated tracks, and its square root.
pub fn mean_reprojection_error(recon: &Reconstruction) -> Result<(f64, f64), EvalError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in &recon.tracks {
        let Some(p) = &t.point else { continue };
        for o in recon.active_observations(t) {
            let (Some(pose), Some(px)) = (recon.pose(o.view_id), recon.pixel(&o)) else {
                continue;
            };
            let k = &recon.views[&o.view_id].intrinsics;
            let Some(uv) = k.project(&pose.world_to_optical(&p.position)) else {
                continue;
            };
            sum += (uv - px).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::NoObservations);
    }
    let mean = sum / n as f64;
    Ok((mean, mean.sqrt()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMetrics {
    pub rmse_min_m: f64,
    pub rmse_mean_m: f64,
    pub rmse_max_m: f64,
    pub coverage: f64,
    pub n_estimated: usize,
    pub n_input: usize,
    /// Views of this class with both estimate and ground truth.
    pub n_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse_min_m: f64,
    pub rmse_mean_m: f64,
    pub rmse_max_m: f64,
    pub coverage_aerial: f64,
    pub coverage_ground: f64,
    pub coverage_total: f64,
    pub reproj_mean_px2: Option<f64>,
    pub reproj_rms_px: Option<f64>,
    pub n_estimated: usize,
    pub n_input: usize,
    pub per_class: BTreeMap<AltitudeClass, ClassMetrics>,
    pub alignment: SimilarityTransform,
    /// Aligned position error per evaluated view, meters.
    pub view_errors: Vec<(ViewId, f64)>,
}

/// Inputs to [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalInput {
    pub estimated: BTreeMap<ViewId, PoseSE3>,
    pub ground_truth: BTreeMap<ViewId, Vector3<f64>>,
    /// Every input view and its class. Views missing here count as ground views.
    pub classes: BTreeMap<ViewId, AltitudeClass>,
    pub reprojection: Option<(f64, f64)>,
    pub include_satellite_in_coverage: bool,
}

/// Aligns the estimated camera centers to ground truth and computes every metric.
///
/// Views estimated but lacking ground truth count toward coverage only.
pub fn evaluate(input: &EvalInput) -> Result<MetricsReport, EvalError> {
    let common: Vec<ViewId> = input
        .estimated
        .keys()
        .copied()
        .filter(|v| input.ground_truth.contains_key(v))
        .collect();
    if common.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }
    let est: Vec<Vector3<f64>> = common.iter().map(|v| input.estimated[v].center()).collect();
    let gt: Vec<Vector3<f64>> = common.iter().map(|v| input.ground_truth[v]).collect();
    let alignment = align_umeyama(&est, &gt)?;
    let view_errors: Vec<(ViewId, f64)> = common
        .iter()
        .zip(est.iter().zip(&gt))
        .map(|(v, (x, y))| (*v, (alignment.apply(x) - y).norm()))
        .collect();
    let errors: Vec<f64> = view_errors.iter().map(|(_, e)| *e).collect();
    let (rmse_min_m, rmse_mean_m, rmse_max_m) = error_stats(&errors);

    let class_of = |v: &ViewId| {
        input
            .classes
            .get(v)
            .copied()
            .unwrap_or(AltitudeClass::Ground)
    };
    let counted =
        |c: AltitudeClass| c != AltitudeClass::Satellite || input.include_satellite_in_coverage;

    let mut per_class: BTreeMap<AltitudeClass, ClassMetrics> = BTreeMap::new();
    let mut all_views: Vec<ViewId> = input.classes.keys().copied().collect();
    all_views.extend(
        input
            .estimated
            .keys()
            .copied()
            .filter(|v| !input.classes.contains_key(v)),
    );
    for v in &all_views {
        let m = per_class.entry(class_of(v)).or_default();
        m.n_input += 1;
        if input.estimated.contains_key(v) {
            m.n_estimated += 1;
        }
    }
    for (class, m) in per_class.iter_mut() {
        let errs: Vec<f64> = view_errors
            .iter()
            .filter(|(v, _)| class_of(v) == *class)
            .map(|(_, e)| *e)
            .collect();
        m.coverage = coverage(m.n_estimated, m.n_input);
        m.n_evaluated = errs.len();
        if !errs.is_empty() {
            (m.rmse_min_m, m.rmse_mean_m, m.rmse_max_m) = error_stats(&errs);
        }
    }
    let (n_estimated, n_input) = per_class
        .iter()
        .filter(|(c, _)| counted(**c))
        .fold((0, 0), |(e, i), (_, m)| (e + m.n_estimated, i + m.n_input));
    let class_cov = |c: AltitudeClass| per_class.get(&c).map_or(0.0, |m| m.coverage);
    Ok(MetricsReport {
        rmse_min_m,
        rmse_mean_m,
        rmse_max_m,
        coverage_aerial: class_cov(AltitudeClass::Aerial),
        coverage_ground: class_cov(AltitudeClass::Ground),
        coverage_total: coverage(n_estimated, n_input),
        reproj_mean_px2: input.reprojection.map(|r| r.0),
        reproj_rms_px: input.reprojection.map(|r| r.1),
        n_estimated,
        n_input,
        per_class,
        alignment,
        view_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_rotation;
    use std::f64::consts::FRAC_PI_2;

    fn pts() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.5),
            Vector3::new(0.0, 2.0, -1.0),
            Vector3::new(3.0, 1.0, 2.0),
        ]
    }

    #[test]
    fn identity_alignment() {
        let t = align_umeyama(&pts(), &pts()).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_constructed_similarity() {
        let r = yaw_rotation(FRAC_PI_2);
        let tr = Vector3::new(1.0, 2.0, 3.0);
        let y: Vec<_> = pts().iter().map(|x| 2.0 * r * x + tr).collect();
        let t = align_umeyama(&pts(), &y).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-10);
        assert!((t.rotation - r).norm() < 1e-10);
        assert!((t.translation - tr).norm() < 1e-10);
    }

    #[test]
    fn collinear_is_degenerate() {
        let x = vec![
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 2.0, 2.0),
        ];
        assert_eq!(align_umeyama(&x, &x), Err(EvalError::Degenerate));
    }

    #[test]
    fn rmse_arithmetic() {
        let a = vec![Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.0, 4.0, 0.0)];
        let b = vec![Vector3::zeros(), Vector3::zeros()];
        let (mn, rmse, mx) = positional_rmse(&a, &b).unwrap();
        assert_eq!((mn, mx), (3.0, 4.0));
        assert!((rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(positional_rmse(&[], &[]), Err(EvalError::EmptyIntersection));
    }

    #[test]
    fn coverage_values() {
        assert_eq!(coverage(0, 7), 0.0);
        assert!((coverage(178, 179) - 0.9944).abs() < 5e-5);
        assert!((coverage(364, 365) - 0.9973).abs() < 5e-5);
    }

    #[test]
    fn half_ground_truth_missing() {
        let mut input = EvalInput::default();
        for (k, p) in pts().iter().enumerate() {
            input
                .estimated
                .insert(k as ViewId, PoseSE3::new(Matrix3::identity(), *p));
            input.classes.insert(k as ViewId, AltitudeClass::Ground);
        }
        for k in 4..8 {
            input.classes.insert(k, AltitudeClass::Aerial);
        }
        for (k, p) in pts().iter().enumerate().take(3) {
            input.ground_truth.insert(k as ViewId, *p);
        }
        let r = evaluate(&input).unwrap();
        assert_eq!(r.view_errors.len(), 3);
        assert!(r.rmse_mean_m < 1e-12);
        assert_eq!(r.coverage_total, 0.5);
        assert_eq!(r.coverage_ground, 1.0);
        assert_eq!(r.coverage_aerial, 0.0);
    }
}
