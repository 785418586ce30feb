//! Bundle adjustment with reprojection and horizontal-prior residuals.
//!
//! The objective is
//! `sum Huber(|reprojection|^2) + sum |translation prior|^2 +
//! sum |rotation prior|^2 + sum |relative motion|^2`, where each prior residual carries the square
//! root of its weight. Prior weights shrink with the number of feature
//! matches supporting the view or the view pair.

mod dump;
pub mod residuals;
mod solver;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::dump::write_problem;
pub use self::residuals::*;
pub use self::solver::{solve, BaReport};
use crate::geometry::{so3_exp, yaw_rotation};
use crate::model::{
    AltitudeClass, CameraIntrinsics, GeometricPrior, Reconstruction, TrackId, ViewId,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error("gauge not fixed: no fixed block and no prior residuals")]
    GaugeNotFixed,
    #[error("normal equations are rank deficient")]
    RankDeficient,
    #[error("residual references missing block: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PriorWeightConfig {
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub lambda_m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PriorWeightConfig {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_r: 0.1,
            lambda_m: 0.1,
            alpha: 0.05,
            beta: 0.05,
        }
    }
}

impl PriorWeightConfig {
    pub fn disabled() -> Self {
        Self {
            lambda_t: 0.0,
            lambda_r: 0.0,
            lambda_m: 0.0,
            ..Self::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.lambda_t == 0.0 && self.lambda_r == 0.0 && self.lambda_m == 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BaConfig {
    pub weights: PriorWeightConfig,
    /// View pairs sharing fewer matches get no rotation or relative-motion term.
    pub min_edge_matches: usize,
    /// Huber width on reprojection residuals, pixels.
    pub huber_px: f64,
    pub max_iterations: usize,
    pub function_tolerance: f64,
    pub gradient_tolerance: f64,
    pub refine_focal: bool,
    /// Focal bounds as multiples of the bootstrap focal.
    pub focal_bounds: [f64; 2],
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            weights: PriorWeightConfig::default(),
            min_edge_matches: 1,
            huber_px: 16.0,
            max_iterations: 100,
            function_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            refine_focal: true,
            focal_bounds: [0.3, 3.0],
        }
    }
}

/// `1 / (1 + coef * n)`.
pub fn confidence_weight(coef: f64, n: usize) -> f64 {
    1.0 / (1.0 + coef * n as f64)
}

/// Translation and rotation prior weights for a view with `n_view` matches and
/// an edge with `n_edge` matches.
pub fn confidence_weights(n_view: usize, n_edge: usize, cfg: &PriorWeightConfig) -> (f64, f64) {
    (
        confidence_weight(cfg.alpha, n_view),
        confidence_weight(cfg.beta, n_edge),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaCamera {
    pub view_id: ViewId,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub group: usize,
    pub fixed_rotation: bool,
    pub fixed_center: [bool; 3],
}

impl BaCamera {
    pub fn pose(&self) -> crate::model::PoseSE3 {
        crate::model::PoseSE3::new(self.rotation, self.center)
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed_rotation && self.fixed_center.iter().all(|&f| f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicsGroup {
    pub intrinsics: CameraIntrinsics,
    pub refine_focal: bool,
    pub focal_min: f64,
    pub focal_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaPoint {
    pub track_id: TrackId,
    pub position: Vector3<f64>,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionTerm {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationPriorTerm {
    pub camera: usize,
    pub target: Vector2<f64>,
    /// Square root of `lambda_t * w_t * confidence`.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPriorTerm {
    pub camera_i: usize,
    pub camera_j: usize,
    /// `Rz(yaw_j) Rz(yaw_i)^T`.
    pub target: Matrix3<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPriorTerm {
    pub camera_i: usize,
    pub camera_j: usize,
    /// Difference of the lifted prior centers, `T_i - T_j`.
    pub target: Vector3<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaProblem {
    pub cameras: Vec<BaCamera>,
    pub groups: Vec<IntrinsicsGroup>,
    pub points: Vec<BaPoint>,
    pub observations: Vec<ReprojectionTerm>,
    pub translation_priors: Vec<TranslationPriorTerm>,
    pub rotation_priors: Vec<RotationPriorTerm>,
    pub motion_priors: Vec<MotionPriorTerm>,
    pub huber_px: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub reprojection: f64,
    pub translation_prior: f64,
    pub rotation_prior: f64,
    pub relative_motion: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.reprojection + self.translation_prior + self.rotation_prior + self.relative_motion
    }

    pub fn prior(&self) -> f64 {
        self.translation_prior + self.rotation_prior + self.relative_motion
    }
}

impl BaProblem {
    pub fn has_priors(&self) -> bool {
        self.translation_priors.iter().any(|t| t.weight > 0.0)
    }

    pub fn validate(&self) -> Result<(), BaError> {
        let nc = self.cameras.len();
        for c in &self.cameras {
            if c.group >= self.groups.len() {
                return Err(BaError::InvalidProblem(format!(
                    "camera {} group {}",
                    c.view_id, c.group
                )));
            }
        }
        for o in &self.observations {
            if o.camera >= nc || o.point >= self.points.len() {
                return Err(BaError::InvalidProblem("observation".into()));
            }
        }
        if self.translation_priors.iter().any(|t| t.camera >= nc)
            || self
                .rotation_priors
                .iter()
                .any(|t| t.camera_i >= nc || t.camera_j >= nc)
            || self
                .motion_priors
                .iter()
                .any(|t| t.camera_i >= nc || t.camera_j >= nc)
        {
            return Err(BaError::InvalidProblem("prior term".into()));
        }
        let anchored = self
            .cameras
            .iter()
            .any(|c| c.fixed_rotation || c.fixed_center.iter().any(|&f| f));
        if !anchored && !self.has_priors() {
            return Err(BaError::GaugeNotFixed);
        }
        Ok(())
    }

    pub fn intrinsics_of(&self, camera: usize) -> &CameraIntrinsics {
        &self.groups[self.cameras[camera].group].intrinsics
    }

    /// Cost terms at the current block values. Observations behind their camera
    /// are skipped and counted.
    pub fn cost(&self) -> (CostBreakdown, usize) {
        let mut out = CostBreakdown::default();
        let mut behind = 0;
        for o in &self.observations {
            let cam = &self.cameras[o.camera];
            match reprojection_residual(
                self.intrinsics_of(o.camera),
                &cam.pose(),
                &self.points[o.point].position,
                &o.pixel,
            ) {
                Some(r) => {
                    out.reprojection += crate::loss::huber_cost(r.norm_squared(), self.huber_px)
                }
                None => behind += 1,
            }
        }
        for t in &self.translation_priors {
            out.translation_prior +=
                translation_prior_residual(&self.cameras[t.camera].center, &t.target, t.weight)
                    .norm_squared();
        }
        for t in &self.rotation_priors {
            out.rotation_prior += rotation_prior_residual(
                &self.cameras[t.camera_i].rotation,
                &self.cameras[t.camera_j].rotation,
                &t.target,
                t.weight,
            )
            .norm_squared();
        }
        for t in &self.motion_priors {
            out.relative_motion += motion_prior_residual(
                &self.cameras[t.camera_i].center,
                &self.cameras[t.camera_j].center,
                &t.target,
                t.weight,
            )
            .norm_squared();
        }
        (out, behind)
    }

    /// Size of the full parameter vector used by [`Self::residual_vector`],
    /// [`Self::dense_jacobian`] and [`Self::retract`]: six per camera
    /// (rotation increment, center), one focal per group, three per point.
    /// Fixed blocks are included.
    pub fn parameter_count(&self) -> usize {
        6 * self.cameras.len() + self.groups.len() + 3 * self.points.len()
    }

    fn group_offset(&self) -> usize {
        6 * self.cameras.len()
    }

    fn point_offset(&self) -> usize {
        6 * self.cameras.len() + self.groups.len()
    }

    /// Applies an increment over the full parameter vector.
    pub fn retract(&self, delta: &DVector<f64>) -> BaProblem {
        let mut p = self.clone();
        for (k, c) in p.cameras.iter_mut().enumerate() {
            let d = delta.fixed_rows::<3>(6 * k).into_owned();
            c.rotation = so3_exp(&d) * c.rotation;
            c.center += delta.fixed_rows::<3>(6 * k + 3);
        }
        let go = self.group_offset();
        for (g, grp) in p.groups.iter_mut().enumerate() {
            grp.intrinsics.focal += delta[go + g];
        }
        let po = self.point_offset();
        for (k, pt) in p.points.iter_mut().enumerate() {
            pt.position += delta.fixed_rows::<3>(po + 3 * k);
        }
        p
    }

    /// Unrobustified residuals: reprojection (2 each, zero when behind the
    /// camera), translation priors (2), rotation priors (9), relative motion (3).
    pub fn residual_vector(&self) -> DVector<f64> {
        self.dense_evaluate(false).0
    }

    /// Analytic Jacobian of [`Self::residual_vector`] with respect to the full
    /// parameter vector. Dense; meant for small problems and checks.
    pub fn dense_jacobian(&self) -> DMatrix<f64> {
        self.dense_evaluate(true).1
    }

    fn dense_evaluate(&self, with_jacobian: bool) -> (DVector<f64>, DMatrix<f64>) {
        let m = 2 * self.observations.len()
            + 2 * self.translation_priors.len()
            + 9 * self.rotation_priors.len()
            + 3 * self.motion_priors.len();
        let n = self.parameter_count();
        let mut r = DVector::zeros(m);
        let mut j = if with_jacobian {
            DMatrix::zeros(m, n)
        } else {
            DMatrix::zeros(0, 0)
        };
        let go = self.group_offset();
        let po = self.point_offset();
        let mut row = 0;
        for o in &self.observations {
            let cam = &self.cameras[o.camera];
            let pt = &self.points[o.point];
            if let Some(jac) = reprojection_jacobian(
                self.intrinsics_of(o.camera),
                &cam.pose(),
                &pt.position,
                &o.pixel,
            ) {
                r.fixed_rows_mut::<2>(row).copy_from(&jac.residual);
                if with_jacobian {
                    j.fixed_view_mut::<2, 3>(row, 6 * o.camera)
                        .copy_from(&jac.d_rotation);
                    j.fixed_view_mut::<2, 3>(row, 6 * o.camera + 3)
                        .copy_from(&jac.d_center);
                    j.fixed_view_mut::<2, 1>(row, go + cam.group)
                        .copy_from(&jac.d_focal);
                    j.fixed_view_mut::<2, 3>(row, po + 3 * o.point)
                        .copy_from(&jac.d_point);
                }
            }
            row += 2;
        }
        for t in &self.translation_priors {
            let c = &self.cameras[t.camera];
            r.fixed_rows_mut::<2>(row)
                .copy_from(&translation_prior_residual(&c.center, &t.target, t.weight));
            if with_jacobian {
                j.fixed_view_mut::<2, 3>(row, 6 * t.camera + 3)
                    .copy_from(&translation_prior_jacobian(t.weight));
            }
            row += 2;
        }
        for t in &self.rotation_priors {
            let (res, di, dj) = rotation_prior_jacobian(
                &self.cameras[t.camera_i].rotation,
                &self.cameras[t.camera_j].rotation,
                &t.target,
                t.weight,
            );
            r.fixed_rows_mut::<9>(row).copy_from(&res);
            if with_jacobian {
                let mut a = j.fixed_view_mut::<9, 3>(row, 6 * t.camera_i);
                a += di;
                let mut b = j.fixed_view_mut::<9, 3>(row, 6 * t.camera_j);
                b += dj;
            }
            row += 9;
        }
        for t in &self.motion_priors {
            let ci = &self.cameras[t.camera_i].center;
            let cj = &self.cameras[t.camera_j].center;
            r.fixed_rows_mut::<3>(row)
                .copy_from(&motion_prior_residual(ci, cj, &t.target, t.weight));
            if with_jacobian {
                let w = Matrix3::identity() * t.weight;
                let mut a = j.fixed_view_mut::<3, 3>(row, 6 * t.camera_i + 3);
                a += w;
                let mut b = j.fixed_view_mut::<3, 3>(row, 6 * t.camera_j + 3);
                b -= w;
            }
            row += 3;
        }
        (r, j)
    }
}

/// Which blocks a problem built from a reconstruction may move.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemScope {
    /// Cameras whose poses are optimized; other registered cameras observing
    /// the selected points enter as fixed blocks.
    pub variable_views: BTreeSet<ViewId>,
    /// Views whose pose is held fixed even if listed as variable.
    pub fixed_views: BTreeSet<ViewId>,
    /// Views whose center Z is held fixed (vertical gauge in prior mode).
    pub fixed_height_views: BTreeSet<ViewId>,
    /// Views with one fixed center coordinate (scale gauge without priors).
    pub fixed_axis: Option<(ViewId, usize)>,
    pub refine_intrinsics: bool,
}

/// Index bookkeeping for writing a solved problem back.
#[derive(Debug, Clone, Default)]
pub struct ProblemMap {
    pub camera_views: Vec<ViewId>,
    pub group_keys: Vec<(AltitudeClass, u32, u32)>,
    pub point_tracks: Vec<TrackId>,
}

/// Match counts that drive the prior weights.
#[derive(Debug, Clone, Default)]
pub struct MatchCounts {
    pub per_view: BTreeMap<ViewId, usize>,
    pub per_pair: BTreeMap<(ViewId, ViewId), usize>,
}

impl MatchCounts {
    pub fn view(&self, v: ViewId) -> usize {
        self.per_view.get(&v).copied().unwrap_or(0)
    }

    pub fn pair(&self, a: ViewId, b: ViewId) -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        self.per_pair.get(&key).copied().unwrap_or(0)
    }

    /// Counts triangulated tracks seen by each registered view and co-observed
    /// by each registered pair (active observations only).
    pub fn from_reconstruction(recon: &Reconstruction) -> Self {
        let mut out = MatchCounts::default();
        for t in &recon.tracks {
            if t.point.is_none() {
                continue;
            }
            let views: Vec<ViewId> = recon
                .active_observations(t)
                .iter()
                .map(|o| o.view_id)
                .collect();
            for (i, &a) in views.iter().enumerate() {
                *out.per_view.entry(a).or_default() += 1;
                for &b in &views[i + 1..] {
                    *out.per_pair.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
        }
        out
    }
}

/// Lifted prior pose height per altitude class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorLift {
    pub ground_height: f64,
    pub aerial_height: f64,
}

impl PriorLift {
    pub fn height(&self, class: AltitudeClass) -> f64 {
        match class {
            AltitudeClass::Ground => self.ground_height,
            AltitudeClass::Aerial | AltitudeClass::Satellite => self.aerial_height,
        }
    }
}

impl Default for PriorLift {
    fn default() -> Self {
        Self {
            ground_height: 1.7,
            aerial_height: 30.0,
        }
    }
}

/// Builds a problem over the tracks observed by the variable views.
#[allow(clippy::too_many_arguments)]
pub fn problem_from_reconstruction(
    recon: &Reconstruction,
    priors: &BTreeMap<ViewId, GeometricPrior>,
    counts: &MatchCounts,
    scope: &ProblemScope,
    bootstrap_focal: &BTreeMap<ViewId, f64>,
    lift: &PriorLift,
    cfg: &BaConfig,
) -> (BaProblem, ProblemMap) {
    let mut problem = BaProblem {
        huber_px: cfg.huber_px,
        ..BaProblem::default()
    };
    let mut map = ProblemMap::default();

    let variable: BTreeSet<ViewId> = scope
        .variable_views
        .iter()
        .copied()
        .filter(|v| recon.registered.contains(v))
        .collect();

    // Points: triangulated tracks with an active observation in a variable view.
    let mut point_index: BTreeMap<TrackId, usize> = BTreeMap::new();
    let mut involved: BTreeSet<ViewId> = variable.clone();
    let mut obs_list: Vec<(ViewId, usize, Vector2<f64>)> = Vec::new();
    for t in &recon.tracks {
        let Some(p) = &t.point else { continue };
        let active = recon.active_observations(t);
        if !active.iter().any(|o| variable.contains(&o.view_id)) {
            continue;
        }
        let idx = problem.points.len();
        problem.points.push(BaPoint {
            track_id: t.track_id,
            position: p.position,
            fixed: false,
        });
        map.point_tracks.push(t.track_id);
        point_index.insert(t.track_id, idx);
        for o in active {
            if let Some(px) = recon.pixel(&o) {
                involved.insert(o.view_id);
                obs_list.push((o.view_id, idx, px));
            }
        }
    }

    let mut group_index: BTreeMap<(AltitudeClass, u32, u32), usize> = BTreeMap::new();
    let mut camera_index: BTreeMap<ViewId, usize> = BTreeMap::new();
    for &v in &involved {
        let view = &recon.views[&v];
        let Some(pose) = recon.pose(v) else { continue };
        let key = (view.altitude, view.width, view.height);
        let g = *group_index.entry(key).or_insert_with(|| {
            let f0 = bootstrap_focal
                .get(&v)
                .copied()
                .unwrap_or(view.intrinsics.focal);
            problem.groups.push(IntrinsicsGroup {
                intrinsics: view.intrinsics,
                refine_focal: false,
                focal_min: cfg.focal_bounds[0] * f0,
                focal_max: cfg.focal_bounds[1] * f0,
            });
            map.group_keys.push(key);
            problem.groups.len() - 1
        });
        let is_var = variable.contains(&v) && !scope.fixed_views.contains(&v);
        if is_var && scope.refine_intrinsics && cfg.refine_focal {
            problem.groups[g].refine_focal = true;
        }
        let mut fixed_center = [!is_var; 3];
        if scope.fixed_height_views.contains(&v) {
            fixed_center[2] = true;
        }
        if let Some((fv, axis)) = scope.fixed_axis {
            if fv == v {
                fixed_center[axis] = true;
            }
        }
        camera_index.insert(v, problem.cameras.len());
        problem.cameras.push(BaCamera {
            view_id: v,
            rotation: pose.rotation,
            center: pose.translation,
            group: g,
            fixed_rotation: !is_var,
            fixed_center,
        });
        map.camera_views.push(v);
    }
    for (v, idx, px) in obs_list {
        if let Some(&c) = camera_index.get(&v) {
            problem.observations.push(ReprojectionTerm {
                camera: c,
                point: idx,
                pixel: px,
            });
        }
    }

    let w = &cfg.weights;
    if !w.is_disabled() {
        let with_prior: Vec<(ViewId, usize)> = camera_index
            .iter()
            .filter(|(v, _)| priors.contains_key(v))
            .map(|(v, c)| (*v, *c))
            .collect();
        for &(v, c) in &with_prior {
            let p = &priors[&v];
            let (wt, _) = confidence_weights(counts.view(v), 0, w);
            let weight = (w.lambda_t * wt * p.confidence).sqrt();
            if weight > 0.0 {
                problem.translation_priors.push(TranslationPriorTerm {
                    camera: c,
                    target: Vector2::new(p.x, p.y),
                    weight,
                });
            }
        }
        for (a, &(vi, ci)) in with_prior.iter().enumerate() {
            for &(vj, cj) in &with_prior[a + 1..] {
                let n = counts.pair(vi, vj);
                if n < cfg.min_edge_matches {
                    continue;
                }
                if problem.cameras[ci].is_fixed() && problem.cameras[cj].is_fixed() {
                    continue;
                }
                let (pi, pj) = (&priors[&vi], &priors[&vj]);
                let (_, wr) = confidence_weights(0, n, w);
                let conf = pi.confidence * pj.confidence;
                let wr_s = (w.lambda_r * wr * conf).sqrt();
                if wr_s > 0.0 {
                    problem.rotation_priors.push(RotationPriorTerm {
                        camera_i: ci,
                        camera_j: cj,
                        target: yaw_rotation(pj.yaw) * yaw_rotation(pi.yaw).transpose(),
                        weight: wr_s,
                    });
                }
                let wm = (w.lambda_m * wr * conf).sqrt();
                if wm > 0.0 {
                    let ti = pi
                        .to_pose(lift.height(recon.views[&vi].altitude))
                        .translation;
                    let tj = pj
                        .to_pose(lift.height(recon.views[&vj].altitude))
                        .translation;
                    problem.motion_priors.push(MotionPriorTerm {
                        camera_i: ci,
                        camera_j: cj,
                        target: ti - tj,
                        weight: wm,
                    });
                }
            }
        }
    }
    (problem, map)
}

/// Writes solved camera poses, intrinsics and points back.
pub fn apply_to_reconstruction(problem: &BaProblem, map: &ProblemMap, recon: &mut Reconstruction) {
    for (cam, &v) in problem.cameras.iter().zip(&map.camera_views) {
        if cam.is_fixed() {
            continue;
        }
        let pose = crate::model::PoseSE3::new(cam.rotation, cam.center);
        recon.register(v, pose);
    }
    for (g, key) in problem.groups.iter().zip(&map.group_keys) {
        if !g.refine_focal {
            continue;
        }
        for view in recon.views.values_mut() {
            if (view.altitude, view.width, view.height) == *key {
                view.intrinsics.focal = g.intrinsics.focal;
            }
        }
    }
    for (pt, &t) in problem.points.iter().zip(&map.point_tracks) {
        if let Some(p) = recon.tracks[t].point.as_mut() {
            p.position = pt.position;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_law_values() {
        assert_eq!(confidence_weight(0.37, 0), 1.0);
        assert_eq!(confidence_weight(0.01, 100), 0.5);
        let w = confidence_weight(0.01, 1_000_000);
        assert!((w - 1.0 / 10001.0).abs() < 1e-15);
        let cfg = PriorWeightConfig::default();
        let (wt, wr) = confidence_weights(20, 40, &cfg);
        assert_eq!(wt, 0.5);
        assert_eq!(wr, 1.0 / 3.0);
    }

    #[test]
    fn gauge_check() {
        let mut p = BaProblem {
            cameras: vec![BaCamera {
                view_id: 0,
                rotation: Matrix3::identity(),
                center: Vector3::zeros(),
                group: 0,
                fixed_rotation: false,
                fixed_center: [false; 3],
            }],
            groups: vec![IntrinsicsGroup {
                intrinsics: CameraIntrinsics::centered(100.0, 100, 100),
                refine_focal: false,
                focal_min: 30.0,
                focal_max: 300.0,
            }],
            huber_px: 16.0,
            ..BaProblem::default()
        };
        assert_eq!(p.validate(), Err(BaError::GaugeNotFixed));
        p.translation_priors.push(TranslationPriorTerm {
            camera: 0,
            target: Vector2::new(3.0, 4.0),
            weight: 1.0,
        });
        assert_eq!(p.validate(), Ok(()));
    }

    #[test]
    fn priors_only_problem_moves_to_prior() {
        let mut p = BaProblem {
            cameras: vec![BaCamera {
                view_id: 0,
                rotation: Matrix3::identity(),
                center: Vector3::new(0.0, 0.0, 5.0),
                group: 0,
                fixed_rotation: false,
                fixed_center: [false; 3],
            }],
            groups: vec![IntrinsicsGroup {
                intrinsics: CameraIntrinsics::centered(100.0, 100, 100),
                refine_focal: false,
                focal_min: 30.0,
                focal_max: 300.0,
            }],
            translation_priors: vec![TranslationPriorTerm {
                camera: 0,
                target: Vector2::new(3.0, 4.0),
                weight: 1.0,
            }],
            huber_px: 16.0,
            ..BaProblem::default()
        };
        assert_eq!(p.cost().0.translation_prior, 25.0);
        let report = solve(&mut p, &BaConfig::default()).unwrap();
        assert!(report.converged);
        let c = p.cameras[0].center;
        assert!((c - Vector3::new(3.0, 4.0, 5.0)).norm() < 1e-6, "{c}");
    }
}
