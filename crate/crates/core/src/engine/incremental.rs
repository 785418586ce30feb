use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::nbv::{next_best_view, FeatureWeightMode, NbvCandidate};
use super::pnp::{pose_uncertainty, register_view_pnp, NeighborPrior, PnpResult, PosePrior};
use super::{
    rank_initial_pairs, stream_rng, verify_pairs, EngineConfig, EngineError, PairVerification,
};
use crate::ba::{
    apply_to_reconstruction, confidence_weight, problem_from_reconstruction, solve, MatchCounts,
    PriorLift, ProblemScope,
};
use crate::eval::align_umeyama;
use crate::geometry::yaw_rotation;
use crate::model::{
    build_tracks, GeometricPrior, KeypointId, KeypointTable, MatchSet, Point3D, PoseSE3,
    Reconstruction, TrackId, View, ViewId,
};
use crate::triangulate::{triangulate_admitted, PointObservation, TriangulationResult};
use crate::twoview::{decompose_essential, normalized_matches};

/// Counts and timings of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub pairs_tested: usize,
    pub pairs_verified: usize,
    pub tracks_built: usize,
    pub dropped_components: usize,
    pub tracks_admitted: usize,
    pub initial_pair: Option<(ViewId, ViewId)>,
    pub registration_order: Vec<ViewId>,
    pub local_ba_runs: usize,
    pub global_ba_runs: usize,
    pub rejected_observations: usize,
    /// `(stage, seconds)`, accumulated per stage in first-use order.
    pub timings: Vec<(String, f64)>,
}

impl RunStats {
    fn time(&mut self, stage: &str, since: Instant) {
        let dt = since.elapsed().as_secs_f64();
        match self.timings.iter_mut().find(|(s, _)| s == stage) {
            Some(entry) => entry.1 += dt,
            None => self.timings.push((stage.to_string(), dt)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub reconstruction: Reconstruction,
    pub stats: RunStats,
    /// Whether the model was moved into the prior frame.
    pub georeferenced: bool,
    pub pairs: Vec<PairVerification>,
}

/// Matches `(view_a, view_b, kp_a, kp_b)` supported by the final model: both
/// keypoints are active observations of the same triangulated track.
pub fn final_inlier_matches(
    recon: &Reconstruction,
) -> BTreeSet<(ViewId, ViewId, KeypointId, KeypointId)> {
    let mut out = BTreeSet::new();
    for t in &recon.tracks {
        if t.point.is_none() {
            continue;
        }
        let obs = recon.active_observations(t);
        for (i, a) in obs.iter().enumerate() {
            for b in &obs[i + 1..] {
                let (x, y) = if a.view_id < b.view_id {
                    (a, b)
                } else {
                    (b, a)
                };
                out.insert((x.view_id, y.view_id, x.keypoint_id, y.keypoint_id));
            }
        }
    }
    out
}

struct Engine<'a> {
    cfg: &'a EngineConfig,
    recon: Reconstruction,
    priors: BTreeMap<ViewId, GeometricPrior>,
    bootstrap_focal: BTreeMap<ViewId, f64>,
    view_tracks: BTreeMap<ViewId, Vec<TrackId>>,
    lift: PriorLift,
    georeferenced: bool,
    stats: RunStats,
}

/// Incremental reconstruction from verified matches, with optional priors.
///
/// Priors move the model into their frame once enough prior-holding views
/// are registered; from then on every bundle adjustment carries the prior
/// terms. Without priors the first camera and one coordinate of the second
/// fix the gauge.
pub fn run_incremental(
    views: Vec<View>,
    keypoints: KeypointTable,
    matches: &MatchSet,
    priors: &[GeometricPrior],
    cfg: &EngineConfig,
) -> Result<EngineOutput, EngineError> {
    let mut stats = RunStats::default();
    let view_map: BTreeMap<ViewId, View> = views.iter().map(|v| (v.view_id, v.clone())).collect();

    let t0 = Instant::now();
    let pairs = verify_pairs(&view_map, &keypoints, matches, cfg);
    stats.pairs_tested = pairs.len();
    let mut verified = MatchSet::new();
    for p in &pairs {
        if !p.verified(cfg.min_pair_inliers) {
            continue;
        }
        stats.pairs_verified += 1;
        let src = matches
            .get(p.view_a, p.view_b)
            .expect("verified pair exists");
        let dst = verified.pair_mut(p.view_a, p.view_b);
        dst.matches = p.inliers.iter().map(|&k| src.matches[k]).collect();
    }
    stats.time("verify_pairs", t0);
    info!(
        "verified {} of {} tested pairs",
        stats.pairs_verified, stats.pairs_tested
    );

    let t0 = Instant::now();
    let built = build_tracks(&verified);
    stats.tracks_built = built.tracks.len();
    stats.dropped_components = built.dropped_components;
    let mut view_tracks: BTreeMap<ViewId, Vec<TrackId>> = BTreeMap::new();
    for t in &built.tracks {
        for o in &t.observations {
            view_tracks.entry(o.view_id).or_default().push(t.track_id);
        }
    }
    stats.time("tracks", t0);

    let mut engine = Engine {
        cfg,
        bootstrap_focal: views
            .iter()
            .map(|v| (v.view_id, v.intrinsics.focal))
            .collect(),
        recon: Reconstruction::new(views, built.tracks, keypoints),
        priors: priors
            .iter()
            .filter(|p| view_map.contains_key(&p.view_id))
            .map(|p| (p.view_id, *p))
            .collect(),
        view_tracks,
        lift: PriorLift {
            ground_height: cfg.ground_height,
            aerial_height: cfg.aerial_height,
        },
        georeferenced: false,
        stats,
    };

    let t0 = Instant::now();
    let ranked = rank_initial_pairs(&pairs, cfg.min_init_matches, cfg.min_init_inlier_ratio);
    if ranked.is_empty() {
        return Err(EngineError::NoValidPair);
    }
    let mut initialized = false;
    for &(a, b) in ranked.iter().take(5) {
        if engine.initialize(a, b, &verified, &pairs) {
            engine.stats.initial_pair = Some((a, b));
            initialized = true;
            break;
        }
        engine.reset();
    }
    engine.stats.time("initialize", t0);
    if !initialized {
        return Err(EngineError::NoValidPair);
    }

    engine.maybe_georeference();
    let mut since_global = 0;
    let mut step = 0u64;
    loop {
        step += 1;
        let t0 = Instant::now();
        let Some((view, result, corr)) = engine.select_next(step) else {
            engine.stats.time("register", t0);
            break;
        };
        engine.register(view, &result, &corr);
        engine.stats.time("register", t0);
        debug!(
            "registered view {view} with {} of {} correspondences, center {:?}",
            result.inlier_count,
            corr.len(),
            result.pose.translation.as_slice()
        );

        let t0 = Instant::now();
        let fresh: Vec<TrackId> = engine.view_tracks.get(&view).cloned().unwrap_or_default();
        engine.triangulate(&fresh);
        engine.stats.time("triangulate", t0);

        let newly_georeferenced = engine.maybe_georeference();
        since_global += 1;
        if newly_georeferenced || since_global >= cfg.global_ba_interval {
            engine.global_ba();
            since_global = 0;
        } else {
            engine.local_ba();
        }
    }
    engine.global_ba();
    if engine.stats.rejected_observations > 0 {
        engine.global_ba();
    }
    engine.stats.tracks_admitted = engine.recon.n_points();
    if let Err(e) = engine.recon.validate() {
        warn!("reconstruction invariant violated: {e}");
    }
    info!(
        "registered {} of {} views, {} points",
        engine.recon.registered.len(),
        engine.recon.views.len(),
        engine.recon.n_points()
    );
    Ok(EngineOutput {
        reconstruction: engine.recon,
        stats: engine.stats,
        georeferenced: engine.georeferenced,
        pairs,
    })
}

impl Engine<'_> {
    fn reset(&mut self) {
        for v in std::mem::take(&mut self.recon.registered) {
            if let Some(view) = self.recon.views.get_mut(&v) {
                view.pose = None;
            }
        }
        for t in &mut self.recon.tracks {
            t.point = None;
        }
        self.recon.rejected.clear();
        self.stats.registration_order.clear();
    }

    fn lifted(&self, v: ViewId) -> Option<Vector3<f64>> {
        let p = self.priors.get(&v)?;
        Some(
            p.to_pose(self.lift.height(self.recon.views[&v].altitude))
                .translation,
        )
    }

    fn initialize(
        &mut self,
        a: ViewId,
        b: ViewId,
        verified: &MatchSet,
        pairs: &[PairVerification],
    ) -> bool {
        let Some(pair) = verified.get(a, b) else {
            return false;
        };
        let Some(e) = pairs
            .iter()
            .find(|p| (p.view_a, p.view_b) == (a, b))
            .and_then(|p| p.essential)
        else {
            return false;
        };
        let ka = self.recon.views[&a].intrinsics;
        let kb = self.recon.views[&b].intrinsics;
        let (xi, xj, _) = normalized_matches(pair, &self.recon.keypoints, &ka, &kb);
        let Ok(rel) = decompose_essential(&e, &xi, &xj) else {
            return false;
        };
        let scale = match (self.lifted(a), self.lifted(b)) {
            (Some(pa), Some(pb)) if (pa - pb).norm() > 1e-6 => (pa - pb).norm(),
            _ => 1.0,
        };
        let first = PoseSE3::identity();
        let r_cw = rel.rotation * first.r_cw();
        let second = PoseSE3::from_world_to_optical(&r_cw, &(rel.translation * scale));
        self.recon.register(a, first);
        self.recon.register(b, second);
        self.stats.registration_order = vec![a, b];

        let shared: Vec<TrackId> = self.view_tracks.get(&a).cloned().unwrap_or_default();
        self.triangulate(&shared);
        let n = self.recon.n_points();
        if n < self.cfg.min_init_points {
            debug!("initial pair ({a}, {b}) gave {n} points");
            return false;
        }
        self.ba(&[a, b].into(), false);
        self.recon.n_points() >= self.cfg.min_init_points
    }

    fn observation(&self, track: TrackId, view: ViewId) -> Option<PointObservation> {
        let o = self.recon.tracks[track].observation_in(view)?;
        let pose = self.recon.pose(view)?;
        let px = self.recon.pixel(&o)?;
        Some(PointObservation::from_pose(
            pose,
            &self.recon.views[&view].intrinsics,
            px,
        ))
    }

    /// Triangulates the listed tracks that have no point yet and at least two
    /// active observations; pruned observations are rejected.
    fn triangulate(&mut self, tracks: &[TrackId]) {
        let todo: Vec<(TrackId, Vec<ViewId>, Vec<PointObservation>)> = tracks
            .iter()
            .filter(|&&t| self.recon.tracks[t].point.is_none())
            .filter_map(|&t| {
                let views: Vec<ViewId> = self
                    .recon
                    .active_observations(&self.recon.tracks[t])
                    .iter()
                    .map(|o| o.view_id)
                    .collect();
                if views.len() < 2 {
                    return None;
                }
                let obs: Vec<PointObservation> = views
                    .iter()
                    .filter_map(|&v| self.observation(t, v))
                    .collect();
                (obs.len() == views.len()).then_some((t, views, obs))
            })
            .collect();
        let cfg = &self.cfg.triangulation;
        let results: Vec<Option<(TriangulationResult, Vec<usize>)>> = todo
            .par_iter()
            .map(|(_, _, obs)| triangulate_admitted(obs, cfg).ok())
            .collect();
        for ((t, views, _), res) in todo.into_iter().zip(results) {
            let Some((res, kept)) = res else { continue };
            for (i, v) in views.iter().enumerate() {
                if !kept.contains(&i) {
                    self.recon.rejected.insert((t, *v));
                    self.stats.rejected_observations += 1;
                }
            }
            self.recon.tracks[t].point = Some(Point3D::new(res.point.position));
        }
    }

    fn correspondences(&self, view: ViewId) -> Vec<(TrackId, Vector3<f64>, Vector2<f64>)> {
        let Some(tracks) = self.view_tracks.get(&view) else {
            return Vec::new();
        };
        tracks
            .iter()
            .filter(|&&t| !self.recon.rejected.contains(&(t, view)))
            .filter_map(|&t| {
                let track = &self.recon.tracks[t];
                let p = track.point?;
                let o = track.observation_in(view)?;
                Some((t, p.position, self.recon.pixel(&o)?))
            })
            .collect()
    }

    /// Prior terms for registering `view` from `corr`: its position prior and
    /// edge terms toward registered views sharing enough of those tracks.
    fn pose_prior(
        &self,
        view: ViewId,
        corr: &[(TrackId, Vector3<f64>, Vector2<f64>)],
    ) -> Option<PosePrior> {
        let w = &self.cfg.ba.weights;
        if !self.georeferenced || w.is_disabled() {
            return None;
        }
        let p = self.priors.get(&view)?;
        let weight = (w.lambda_t * confidence_weight(w.alpha, corr.len()) * p.confidence).sqrt();
        let mut shared: BTreeMap<ViewId, usize> = BTreeMap::new();
        for (t, _, _) in corr {
            for o in self.recon.active_observations(&self.recon.tracks[*t]) {
                if o.view_id != view && self.recon.registered.contains(&o.view_id) {
                    *shared.entry(o.view_id).or_default() += 1;
                }
            }
        }
        let own = self.lifted(view)?;
        let neighbors = shared
            .into_iter()
            .filter(|(_, n)| *n >= self.cfg.ba.min_edge_matches)
            .filter_map(|(nv, n)| {
                let q = self.priors.get(&nv)?;
                let conf = p.confidence * q.confidence;
                let wr = confidence_weight(w.beta, n);
                Some(NeighborPrior {
                    pose: *self.recon.pose(nv)?,
                    rotation_target: yaw_rotation(p.yaw) * yaw_rotation(q.yaw).transpose(),
                    rotation_weight: (w.lambda_r * wr * conf).sqrt(),
                    motion_target: own - self.lifted(nv)?,
                    motion_weight: (w.lambda_m * wr * conf).sqrt(),
                })
            })
            .collect();
        Some(PosePrior {
            target: Vector2::new(p.x, p.y),
            weight,
            initial_pose: Some(PoseSE3::new(p.to_pose(0.0).rotation, own)),
            neighbors,
        })
    }

    /// Scores every candidate with a provisional registration and returns the
    /// chosen view with its registration.
    #[allow(clippy::type_complexity)]
    fn select_next(
        &self,
        step: u64,
    ) -> Option<(
        ViewId,
        PnpResult,
        Vec<(TrackId, Vector3<f64>, Vector2<f64>)>,
    )> {
        let candidates: Vec<(ViewId, Vec<(TrackId, Vector3<f64>, Vector2<f64>)>)> = self
            .recon
            .views
            .keys()
            .filter(|v| !self.recon.registered.contains(v))
            .map(|&v| (v, self.correspondences(v)))
            .filter(|(_, c)| c.len() >= 4)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let results: Vec<Option<PnpResult>> = candidates
            .par_iter()
            .map(|(v, corr)| {
                let pts: Vec<Vector3<f64>> = corr.iter().map(|c| c.1).collect();
                let px: Vec<Vector2<f64>> = corr.iter().map(|c| c.2).collect();
                let prior = self.pose_prior(*v, corr);
                let mut rng = stream_rng(self.cfg.seed, 2, *v as u64, step);
                let k = &self.recon.views[v].intrinsics;
                register_view_pnp(k, &pts, &px, prior.as_ref(), &self.cfg.pnp, &mut rng).ok()
            })
            .collect();
        let scored: Vec<NbvCandidate> = candidates
            .iter()
            .zip(&results)
            .map(|((v, corr), r)| NbvCandidate {
                view_id: *v,
                visibility: match self.cfg.nbv.feature_weight_mode {
                    FeatureWeightMode::Uniform => corr.len() as f64,
                    FeatureWeightMode::ScoreWeighted => {
                        corr.iter().map(|c| self.recon.tracks[c.0].mean_score).sum()
                    }
                },
                n_observations: corr.len(),
                uncertainty: r
                    .as_ref()
                    .map(|r| pose_uncertainty(&r.covariance))
                    .filter(|u| u.is_finite())
                    .unwrap_or(f64::INFINITY),
            })
            .collect();
        let chosen = next_best_view(&scored, &self.cfg.nbv)?;
        let i = candidates.iter().position(|c| c.0 == chosen)?;
        let result = results[i].clone()?;
        Some((chosen, result, candidates[i].1.clone()))
    }

    fn register(
        &mut self,
        view: ViewId,
        result: &PnpResult,
        corr: &[(TrackId, Vector3<f64>, Vector2<f64>)],
    ) {
        self.recon.register(view, result.pose);
        self.stats.registration_order.push(view);
        for (i, c) in corr.iter().enumerate() {
            if result.inliers.binary_search(&i).is_err() {
                self.recon.rejected.insert((c.0, view));
                self.stats.rejected_observations += 1;
            }
        }
    }

    /// Moves the model into the prior frame by a similarity fit of camera
    /// centers onto lifted prior positions. Returns true when it happened now.
    fn maybe_georeference(&mut self) -> bool {
        if self.georeferenced || self.priors.is_empty() {
            return false;
        }
        let with_prior: Vec<ViewId> = self
            .stats
            .registration_order
            .iter()
            .copied()
            .filter(|v| self.priors.contains_key(v))
            .collect();
        if with_prior.len() < self.cfg.min_georef_views.max(3) {
            return false;
        }
        let est: Vec<Vector3<f64>> = with_prior
            .iter()
            .map(|v| self.recon.pose(*v).unwrap().translation)
            .collect();
        let tgt: Vec<Vector3<f64>> = with_prior
            .iter()
            .map(|v| self.lifted(*v).unwrap())
            .collect();
        let Ok(mut sim) = align_umeyama(&est, &tgt) else {
            return false;
        };
        if est.len() >= 4 {
            // one refit without the fits that are far worse than typical
            let res: Vec<f64> = est
                .iter()
                .zip(&tgt)
                .map(|(e, t)| (sim.apply(e) - t).norm())
                .collect();
            let mut sorted = res.clone();
            sorted.sort_by(f64::total_cmp);
            let cut = 3.0 * sorted[sorted.len() / 2] + 1e-9;
            let keep: Vec<usize> = (0..res.len()).filter(|&i| res[i] <= cut).collect();
            if keep.len() >= 3 && keep.len() < res.len() {
                let e2: Vec<Vector3<f64>> = keep.iter().map(|&i| est[i]).collect();
                let t2: Vec<Vector3<f64>> = keep.iter().map(|&i| tgt[i]).collect();
                if let Ok(s2) = align_umeyama(&e2, &t2) {
                    sim = s2;
                }
            }
        }
        let registered: Vec<ViewId> = self.recon.registered.iter().copied().collect();
        for v in registered {
            let pose = sim.apply_pose(self.recon.pose(v).unwrap());
            self.recon.register(v, pose);
        }
        for t in &mut self.recon.tracks {
            if let Some(p) = t.point.as_mut() {
                p.position = sim.apply(&p.position);
            }
        }
        self.georeferenced = true;
        info!("model moved into the prior frame (scale {:.4})", sim.scale);
        true
    }

    fn scope(&self, variable: BTreeSet<ViewId>, refine_intrinsics: bool) -> ProblemScope {
        let order = &self.stats.registration_order;
        let mut scope = ProblemScope {
            variable_views: variable,
            fixed_views: BTreeSet::new(),
            fixed_height_views: BTreeSet::new(),
            fixed_axis: None,
            refine_intrinsics,
        };
        if self.georeferenced {
            scope.fixed_height_views.insert(order[0]);
        } else {
            scope.fixed_views.insert(order[0]);
            if let (Some(a), Some(b)) = (
                self.recon.pose(order[0]),
                order.get(1).and_then(|v| self.recon.pose(*v)),
            ) {
                let d = b.translation - a.translation;
                scope.fixed_axis = Some((order[1], d.iamax()));
            }
        }
        scope
    }

    fn ba(&mut self, variable: &BTreeSet<ViewId>, refine_intrinsics: bool) {
        let scope = self.scope(variable.clone(), refine_intrinsics);
        let counts = MatchCounts::from_reconstruction(&self.recon);
        let priors = if self.georeferenced {
            self.priors.clone()
        } else {
            BTreeMap::new()
        };
        let (mut problem, map) = problem_from_reconstruction(
            &self.recon,
            &priors,
            &counts,
            &scope,
            &self.bootstrap_focal,
            &self.lift,
            &self.cfg.ba,
        );
        if problem.points.is_empty() && !problem.has_priors() {
            return;
        }
        match solve(&mut problem, &self.cfg.ba) {
            Ok(report) => {
                debug!(
                    "BA over {} cameras / {} points: cost {:.6e} -> {:.6e} in {} iterations",
                    problem.cameras.len(),
                    problem.points.len(),
                    report.initial.total(),
                    report.final_cost.total(),
                    report.iterations
                );
                apply_to_reconstruction(&problem, &map, &mut self.recon);
            }
            Err(e) => warn!("bundle adjustment skipped: {e}"),
        }
        self.filter_observations();
    }

    fn local_ba(&mut self) {
        let t0 = Instant::now();
        let order = &self.stats.registration_order;
        let window: BTreeSet<ViewId> = order
            .iter()
            .rev()
            .take(self.cfg.local_ba_window)
            .copied()
            .collect();
        self.ba(&window, false);
        self.stats.local_ba_runs += 1;
        self.stats.time("local_ba", t0);
    }

    fn global_ba(&mut self) {
        let t0 = Instant::now();
        let all: BTreeSet<ViewId> = self.recon.registered.clone();
        self.ba(&all, true);
        let pending: Vec<TrackId> = (0..self.recon.tracks.len()).collect();
        let before = self.recon.n_points();
        self.triangulate(&pending);
        if self.recon.n_points() > before {
            self.ba(&all, true);
        }
        self.stats.global_ba_runs += 1;
        self.stats.time("global_ba", t0);
    }

    /// Rejects observations reprojecting beyond the admission limit or behind
    /// their camera; points left with fewer than two observations are removed.
    fn filter_observations(&mut self) {
        let limit = self.cfg.triangulation.max_reproj_px;
        let mut reject = Vec::new();
        for t in &self.recon.tracks {
            let Some(p) = t.point else { continue };
            for o in self.recon.active_observations(t) {
                let view = &self.recon.views[&o.view_id];
                let pose = self.recon.pose(o.view_id).unwrap();
                let px = self.recon.pixel(&o).unwrap();
                let pc = pose.world_to_optical(&p.position);
                let bad = match view.intrinsics.project(&pc) {
                    Some(uv) => (uv - px).norm() > limit,
                    None => true,
                };
                if bad {
                    reject.push((t.track_id, o.view_id));
                }
            }
        }
        self.stats.rejected_observations += reject.len();
        self.recon.rejected.extend(reject);
        for i in 0..self.recon.tracks.len() {
            if self.recon.tracks[i].point.is_some()
                && self.recon.active_observations(&self.recon.tracks[i]).len() < 2
            {
                self.recon.tracks[i].point = None;
            }
        }
    }
}
