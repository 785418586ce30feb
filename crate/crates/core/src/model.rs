//! Scene-graph data model and multi-view track construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x4, UnitQuaternion, Vector2, Vector3};

use crate::geometry::{is_rotation, optical_from_body, yaw_rotation};

pub type ViewId = u32;
pub type KeypointId = u32;
pub type TrackId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AltitudeClass {
    Ground,
    Aerial,
    Satellite,
}

impl AltitudeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AltitudeClass::Ground => "ground",
            AltitudeClass::Aerial => "aerial",
            AltitudeClass::Satellite => "satellite",
        }
    }
}

impl fmt::Display for AltitudeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AltitudeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ground" => Ok(AltitudeClass::Ground),
            "aerial" => Ok(AltitudeClass::Aerial),
            "satellite" => Ok(AltitudeClass::Satellite),
            other => Err(format!("unknown altitude class '{other}'")),
        }
    }
}

/// Pinhole intrinsics with one radial distortion coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
}

impl CameraIntrinsics {
    /// Principal point at the image center, no distortion.
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        Self {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            k1: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0,
        )
    }

    /// Pixel to normalized image coordinates, ignoring distortion.
    pub fn normalize(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.focal, (uv.y - self.cy) / self.focal)
    }

    /// Projects an optical-frame point. `None` when it is not in front of the camera.
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= 0.0 {
            return None;
        }
        let x = pc.x / pc.z;
        let y = pc.y / pc.z;
        let d = 1.0 + self.k1 * (x * x + y * y);
        Some(Vector2::new(
            self.focal * d * x + self.cx,
            self.focal * d * y + self.cy,
        ))
    }

    /// Projection together with its Jacobian with respect to the optical-frame
    /// point and with respect to the focal length.
    pub fn project_jacobian(
        &self,
        pc: &Vector3<f64>,
    ) -> Option<(Vector2<f64>, Matrix2x3<f64>, Vector2<f64>)> {
        if pc.z <= 0.0 {
            return None;
        }
        let iz = 1.0 / pc.z;
        let x = pc.x * iz;
        let y = pc.y * iz;
        let r2 = x * x + y * y;
        let d = 1.0 + self.k1 * r2;
        let f = self.focal;
        let uv = Vector2::new(f * d * x + self.cx, f * d * y + self.cy);
        let duv_dxy = Matrix2::new(
            f * (d + 2.0 * self.k1 * x * x),
            f * 2.0 * self.k1 * x * y,
            f * 2.0 * self.k1 * x * y,
            f * (d + 2.0 * self.k1 * y * y),
        );
        let dxy_dpc = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
        Some((uv, duv_dxy * dxy_dpc, Vector2::new(d * x, d * y)))
    }
}

/// Camera pose in the global frame: body-to-world rotation and camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a world-to-optical transform `x_c = R_cw x_w + t_cw`.
    pub fn from_world_to_optical(r_cw: &Matrix3<f64>, t_cw: &Vector3<f64>) -> Self {
        let rotation = r_cw.transpose() * optical_from_body();
        let translation = -(r_cw.transpose() * t_cw);
        Self {
            rotation,
            translation,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Rotation taking world vectors into the optical frame.
    pub fn r_cw(&self) -> Matrix3<f64> {
        optical_from_body() * self.rotation.transpose()
    }

    pub fn t_cw(&self) -> Vector3<f64> {
        -(self.r_cw() * self.translation)
    }

    pub fn world_to_optical(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r_cw() * (x - self.translation)
    }

    pub fn projection_matrix(&self, k: &CameraIntrinsics) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r_cw());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t_cw());
        k.matrix() * rt
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        is_rotation(&self.rotation, tol) && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }
}

/// Horizontal pose prior for one view: position East/North in meters and yaw
/// counterclockwise about +Z from +X, with a confidence in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricPrior {
    pub view_id: ViewId,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub confidence: f64,
}

impl GeometricPrior {
    pub fn new(view_id: ViewId, x: f64, y: f64, yaw: f64) -> Self {
        Self {
            view_id,
            x,
            y,
            yaw,
            confidence: 1.0,
        }
    }

    /// Lifts the prior to a full pose: yaw-only rotation, center `(x, y, z)`.
    pub fn to_pose(&self, z: f64) -> PoseSE3 {
        PoseSE3::new(yaw_rotation(self.yaw), Vector3::new(self.x, self.y, z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub view_id: ViewId,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub altitude: AltitudeClass,
    pub intrinsics: CameraIntrinsics,
    pub pose: Option<PoseSE3>,
}

impl View {
    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub view_id: ViewId,
    pub keypoint_id: KeypointId,
    pub position: Vector2<f64>,
}

/// Keypoint positions, per view then per keypoint id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointTable {
    by_view: BTreeMap<ViewId, BTreeMap<KeypointId, Vector2<f64>>>,
}

impl KeypointTable {
    pub fn insert(&mut self, kp: Keypoint) -> bool {
        self.by_view
            .entry(kp.view_id)
            .or_default()
            .insert(kp.keypoint_id, kp.position)
            .is_none()
    }

    pub fn get(&self, view: ViewId, kp: KeypointId) -> Option<Vector2<f64>> {
        self.by_view.get(&view).and_then(|m| m.get(&kp)).copied()
    }

    pub fn view(&self, view: ViewId) -> impl Iterator<Item = (KeypointId, Vector2<f64>)> + '_ {
        self.by_view
            .get(&view)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (*k, *v)))
    }

    pub fn count(&self, view: ViewId) -> usize {
        self.by_view.get(&view).map_or(0, |m| m.len())
    }

    pub fn len(&self) -> usize {
        self.by_view.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Keypoint> + '_ {
        self.by_view.iter().flat_map(|(v, m)| {
            m.iter().map(move |(k, p)| Keypoint {
                view_id: *v,
                keypoint_id: *k,
                position: *p,
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub kp_a: KeypointId,
    pub kp_b: KeypointId,
    pub score: f64,
}

/// Correspondences between two views, `view_a < view_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPair {
    pub view_a: ViewId,
    pub view_b: ViewId,
    pub matches: Vec<Match>,
}

impl MatchPair {
    pub fn new(view_a: ViewId, view_b: ViewId) -> Self {
        Self {
            view_a,
            view_b,
            matches: Vec::new(),
        }
    }

    pub fn key(&self) -> (ViewId, ViewId) {
        (self.view_a, self.view_b)
    }
}

/// All pairwise matches, keyed by canonical view pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: BTreeMap<(ViewId, ViewId), MatchPair>,
}

impl MatchSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pair_mut(&mut self, a: ViewId, b: ViewId) -> &mut MatchPair {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.pairs
            .entry((a, b))
            .or_insert_with(|| MatchPair::new(a, b))
    }

    pub fn insert(&mut self, pair: MatchPair) {
        self.pairs.insert(pair.key(), pair);
    }

    pub fn get(&self, a: ViewId, b: ViewId) -> Option<&MatchPair> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MatchPair> {
        self.pairs.values()
    }

    pub fn total_matches(&self) -> usize {
        self.pairs.values().map(|p| p.matches.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub position: Vector3<f64>,
    pub color: Option<[u8; 3]>,
}

impl Point3D {
    pub fn new(position: Vector3<f64>) -> Self {
        Self {
            position,
            color: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observation {
    pub view_id: ViewId,
    pub keypoint_id: KeypointId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: TrackId,
    /// Sorted by view id; each view appears once.
    pub observations: Vec<Observation>,
    /// Mean score of the matches that formed the track.
    pub mean_score: f64,
    pub point: Option<Point3D>,
}

impl Track {
    pub fn observation_in(&self, view: ViewId) -> Option<Observation> {
        self.observations
            .binary_search_by_key(&view, |o| o.view_id)
            .ok()
            .map(|i| self.observations[i])
    }
}

/// Result of [`build_tracks`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackBuild {
    pub tracks: Vec<Track>,
    /// Components that contained two keypoints of the same view.
    pub dropped_components: usize,
    pub dropped_observations: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Merges pairwise matches into multi-view tracks.
///
/// Connected components of the keypoint graph become tracks. Components that
/// hold two keypoints of one view are dropped whole. Track ids follow the
/// ordering of each component's smallest observation, so the output does not
/// depend on the order of the input matches.
pub fn build_tracks(matches: &MatchSet) -> TrackBuild {
    let mut nodes: BTreeMap<Observation, usize> = BTreeMap::new();
    for pair in matches.iter() {
        for m in &pair.matches {
            for obs in [
                Observation {
                    view_id: pair.view_a,
                    keypoint_id: m.kp_a,
                },
                Observation {
                    view_id: pair.view_b,
                    keypoint_id: m.kp_b,
                },
            ] {
                let n = nodes.len();
                nodes.entry(obs).or_insert(n);
            }
        }
    }
    let keys: Vec<Observation> = {
        let mut v = vec![
            Observation {
                view_id: 0,
                keypoint_id: 0
            };
            nodes.len()
        ];
        for (k, &i) in &nodes {
            v[i] = *k;
        }
        v
    };

    let mut uf = UnionFind::new(nodes.len());
    for pair in matches.iter() {
        for m in &pair.matches {
            let a = nodes[&Observation {
                view_id: pair.view_a,
                keypoint_id: m.kp_a,
            }];
            let b = nodes[&Observation {
                view_id: pair.view_b,
                keypoint_id: m.kp_b,
            }];
            uf.union(a, b);
        }
    }

    let mut members: BTreeMap<usize, Vec<Observation>> = BTreeMap::new();
    for (i, obs) in keys.iter().enumerate() {
        members.entry(uf.find(i)).or_default().push(*obs);
    }
    let mut scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for pair in matches.iter() {
        for m in &pair.matches {
            let a = nodes[&Observation {
                view_id: pair.view_a,
                keypoint_id: m.kp_a,
            }];
            scores.entry(uf.find(a)).or_default().push(m.score);
        }
    }

    let mut components: Vec<(Vec<Observation>, f64)> = Vec::new();
    let mut dropped_components = 0;
    let mut dropped_observations = 0;
    for (root, mut obs) in members {
        obs.sort();
        let views: BTreeSet<ViewId> = obs.iter().map(|o| o.view_id).collect();
        if views.len() != obs.len() {
            dropped_components += 1;
            dropped_observations += obs.len();
            continue;
        }
        let mut s = scores.remove(&root).unwrap_or_default();
        s.sort_by(f64::total_cmp);
        let mean = if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        };
        components.push((obs, mean));
    }
    components.sort_by(|a, b| a.0[0].cmp(&b.0[0]));

    let tracks = components
        .into_iter()
        .enumerate()
        .map(|(track_id, (observations, mean_score))| Track {
            track_id,
            observations,
            mean_score,
            point: None,
        })
        .collect();
    TrackBuild {
        tracks,
        dropped_components,
        dropped_observations,
    }
}

/// The evolving scene graph: views with optional poses, tracks with optional
/// points, and the observed keypoint positions.
#[derive(Debug, Clone, Default)]
pub struct Reconstruction {
    pub views: BTreeMap<ViewId, View>,
    pub tracks: Vec<Track>,
    pub registered: BTreeSet<ViewId>,
    pub keypoints: KeypointTable,
    /// Observations rejected as outliers; excluded from triangulation, BA and metrics.
    pub rejected: BTreeSet<(TrackId, ViewId)>,
}

impl Reconstruction {
    pub fn new(views: Vec<View>, tracks: Vec<Track>, keypoints: KeypointTable) -> Self {
        Self {
            views: views.into_iter().map(|v| (v.view_id, v)).collect(),
            tracks,
            registered: BTreeSet::new(),
            keypoints,
            rejected: BTreeSet::new(),
        }
    }

    pub fn pose(&self, view: ViewId) -> Option<&PoseSE3> {
        if !self.registered.contains(&view) {
            return None;
        }
        self.views.get(&view).and_then(|v| v.pose.as_ref())
    }

    pub fn register(&mut self, view: ViewId, pose: PoseSE3) {
        if let Some(v) = self.views.get_mut(&view) {
            v.pose = Some(pose);
            self.registered.insert(view);
        }
    }

    pub fn pixel(&self, obs: &Observation) -> Option<Vector2<f64>> {
        self.keypoints.get(obs.view_id, obs.keypoint_id)
    }

    /// Observations of a track that are in registered views and not rejected.
    pub fn active_observations(&self, track: &Track) -> Vec<Observation> {
        track
            .observations
            .iter()
            .filter(|o| {
                self.registered.contains(&o.view_id)
                    && !self.rejected.contains(&(track.track_id, o.view_id))
            })
            .copied()
            .collect()
    }

    pub fn n_points(&self) -> usize {
        self.tracks.iter().filter(|t| t.point.is_some()).count()
    }

    /// Number of triangulated tracks each view observes (active observations only).
    pub fn visible_point_count(&self, view: ViewId) -> usize {
        self.tracks
            .iter()
            .filter(|t| {
                t.point.is_some()
                    && t.observation_in(view).is_some()
                    && !self.rejected.contains(&(t.track_id, view))
            })
            .count()
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        for id in &self.registered {
            let Some(view) = self.views.get(id) else {
                return Err(format!("registered view {id} does not exist"));
            };
            match &view.pose {
                Some(p) if p.is_valid(1e-9) => {}
                Some(_) => return Err(format!("view {id} has a non-orthonormal rotation")),
                None => return Err(format!("registered view {id} has no pose")),
            }
        }
        for t in &self.tracks {
            if let Some(p) = &t.point {
                if !p.position.iter().all(|v| v.is_finite()) {
                    return Err(format!("track {} has a non-finite point", t.track_id));
                }
                if self.active_observations(t).len() < 2 {
                    return Err(format!(
                        "track {} is triangulated with fewer than two registered observations",
                        t.track_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: ViewId, b: ViewId, m: &[(KeypointId, KeypointId)]) -> MatchPair {
        MatchPair {
            view_a: a,
            view_b: b,
            matches: m
                .iter()
                .map(|&(kp_a, kp_b)| Match {
                    kp_a,
                    kp_b,
                    score: 1.0,
                })
                .collect(),
        }
    }

    fn obs(v: ViewId, k: KeypointId) -> Observation {
        Observation {
            view_id: v,
            keypoint_id: k,
        }
    }

    #[test]
    fn empty_matches_give_no_tracks() {
        let b = build_tracks(&MatchSet::new());
        assert!(b.tracks.is_empty());
        assert_eq!(b.dropped_components, 0);
    }

    #[test]
    fn transitive_chain_forms_one_track() {
        let mut ms = MatchSet::new();
        ms.insert(pair(0, 1, &[(1, 2)]));
        ms.insert(pair(1, 2, &[(2, 3)]));
        let b = build_tracks(&ms);
        assert_eq!(b.tracks.len(), 1);
        assert_eq!(
            b.tracks[0].observations,
            vec![obs(0, 1), obs(1, 2), obs(2, 3)]
        );
    }

    #[test]
    fn same_view_twice_drops_component() {
        let mut ms = MatchSet::new();
        ms.insert(pair(0, 1, &[(1, 2), (5, 2)]));
        let b = build_tracks(&ms);
        assert!(b.tracks.is_empty());
        assert_eq!(b.dropped_components, 1);
        assert_eq!(b.dropped_observations, 3);
    }

    #[test]
    fn pose_world_to_optical_roundtrip() {
        let p = PoseSE3::new(
            crate::geometry::so3_exp(&Vector3::new(0.1, 0.4, -0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let q = PoseSE3::from_world_to_optical(&p.r_cw(), &p.t_cw());
        assert!((p.rotation - q.rotation).norm() < 1e-14);
        assert!((p.translation - q.translation).norm() < 1e-14);
    }

    #[test]
    fn identity_pose_looks_east() {
        let p = PoseSE3::identity();
        let k = CameraIntrinsics::centered(100.0, 100, 100);
        let uv = k
            .project(&p.world_to_optical(&Vector3::new(10.0, 0.0, 0.0)))
            .unwrap();
        assert_eq!(uv, Vector2::new(50.0, 50.0));
        // a point to the north (left of the camera) lands left of center
        let uv = k
            .project(&p.world_to_optical(&Vector3::new(10.0, 1.0, 0.0)))
            .unwrap();
        assert!(uv.x < 50.0);
    }
}
