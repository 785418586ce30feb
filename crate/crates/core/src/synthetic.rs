//! Synthetic multi-altitude scenes with exact ground truth.
//!
//! Landmarks are uniform in a box of side `extent` and height `extent / 10`.
//! Ground cameras sit on a ring of radius `0.7 * extent` at 1.7 m and look
//! inward; aerial cameras sit on a grid at 30 m, pitched down 45 to 80 degrees
//! and headed roughly toward the scene center.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::initial_focal;
use crate::geometry::{normalize_angle, yaw_rotation};
use crate::ingest::{
    write_correspondences, write_ground_truth, write_labels, write_priors, GroundTruth,
    GroundTruthRecord, OutlierLabels,
};
use crate::model::{
    AltitudeClass, CameraIntrinsics, GeometricPrior, Keypoint, KeypointId, KeypointTable, Match,
    MatchSet, PoseSE3, View, ViewId,
};

const MAX_ATTEMPTS: usize = 10;
const HALF_FOV: f64 = PI / 6.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("no usable scene in {0} attempts")]
    EmptyView(usize),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PriorNoise {
    /// Horizontal position sigma, meters.
    pub xy: f64,
    /// Yaw sigma, radians.
    pub yaw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_ground: usize,
    pub n_aerial: usize,
    pub n_points: usize,
    pub extent: f64,
    pub pixel_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub prior_noise: PriorNoise,
    pub prior_outlier_fraction: f64,
    pub rng_seed: u64,
    pub image_width: u32,
    pub image_height: u32,
    pub ground_height: f64,
    pub aerial_height: f64,
    /// Replaces every ground-aerial match by a seam of this many extra
    /// landmarks along a short straight edge, matched across bands in a single
    /// view pair.
    pub seam_landmarks: Option<usize>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_ground: 10,
            n_aerial: 10,
            n_points: 3000,
            extent: 100.0,
            pixel_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            prior_noise: PriorNoise::default(),
            prior_outlier_fraction: 0.0,
            rng_seed: 0,
            image_width: 1920,
            image_height: 1080,
            ground_height: 1.7,
            aerial_height: 30.0,
            seam_landmarks: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        for (name, f) in [
            ("outlier_fraction", self.outlier_fraction),
            ("prior_outlier_fraction", self.prior_outlier_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} = {f} is outside [0, 1)"));
            }
        }
        for (name, s) in [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("prior_noise.xy", self.prior_noise.xy),
            ("prior_noise.yaw", self.prior_noise.yaw),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} = {s} must be a finite value >= 0"));
            }
        }
        if self.n_ground + self.n_aerial < 2 {
            return bad("a scene needs at least 2 views".into());
        }
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(format!("extent = {} must be positive", self.extent));
        }
        if self.seam_landmarks == Some(0) {
            return bad("seam_landmarks must be positive".into());
        }
        if self.seam_landmarks.is_some() && (self.n_ground == 0 || self.n_aerial == 0) {
            return bad("a seam needs both ground and aerial views".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image dimensions must be positive".into());
        }
        Ok(())
    }
}

/// A generated scene: inputs in model form plus the ground truth behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub views: Vec<View>,
    pub keypoints: KeypointTable,
    pub matches: MatchSet,
    pub priors: Vec<GeometricPrior>,
    pub poses: BTreeMap<ViewId, PoseSE3>,
    pub landmarks: Vec<Vector3<f64>>,
    /// Landmark behind each non-clutter keypoint.
    pub keypoint_landmark: BTreeMap<(ViewId, KeypointId), usize>,
    pub labels: OutlierLabels,
    pub warnings: Vec<String>,
}

/// The four files of a scene, in ingest formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneFiles {
    pub correspondences: String,
    pub priors: String,
    pub ground_truth: String,
    pub labels: String,
}

impl SceneFiles {
    pub const NAMES: [&'static str; 4] = [
        "correspondences.txt",
        "priors.txt",
        "ground_truth.txt",
        "labels.txt",
    ];

    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let texts = [
            &self.correspondences,
            &self.priors,
            &self.ground_truth,
            &self.labels,
        ];
        for (name, text) in Self::NAMES.iter().zip(texts) {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|source| SynthError::Io { path, source })?;
        }
        Ok(())
    }
}

impl SyntheticScene {
    pub fn files(&self) -> SceneFiles {
        let gt = GroundTruth {
            records: self
                .poses
                .iter()
                .map(|(v, p)| (*v, GroundTruthRecord::Local(p.center())))
                .collect(),
        };
        SceneFiles {
            correspondences: write_correspondences(&self.views, &self.keypoints, &self.matches),
            priors: write_priors(&self.priors),
            ground_truth: write_ground_truth(&gt),
            labels: write_labels(&self.labels),
        }
    }

    pub fn centers(&self) -> BTreeMap<ViewId, Vector3<f64>> {
        self.poses.iter().map(|(v, p)| (*v, p.center())).collect()
    }

    pub fn altitude(&self, view: ViewId) -> Option<AltitudeClass> {
        self.views
            .iter()
            .find(|v| v.view_id == view)
            .map(|v| v.altitude)
    }
}

/// Body-to-world rotation for a heading and a downward pitch.
fn camera_rotation(yaw: f64, pitch_down: f64) -> Matrix3<f64> {
    let (s, c) = pitch_down.sin_cos();
    yaw_rotation(yaw) * Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn place_cameras(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<(AltitudeClass, PoseSE3)> {
    let mut out = Vec::with_capacity(spec.n_ground + spec.n_aerial);
    let radius = 0.7 * spec.extent;
    for k in 0..spec.n_ground {
        let theta = TAU * k as f64 / spec.n_ground as f64;
        let center = Vector3::new(
            radius * theta.cos(),
            radius * theta.sin(),
            spec.ground_height,
        );
        let yaw = normalize_angle(theta + PI + rng.random_range(-0.15..0.15));
        out.push((
            AltitudeClass::Ground,
            PoseSE3::new(yaw_rotation(yaw), center),
        ));
    }
    let cols = (spec.n_aerial as f64).sqrt().ceil().max(1.0) as usize;
    let rows = spec.n_aerial.div_ceil(cols).max(1);
    let span = 0.6 * spec.extent;
    let step = |n: usize, i: usize| {
        if n > 1 {
            -span / 2.0 + span * i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    for k in 0..spec.n_aerial {
        let (r, c) = (k / cols, k % cols);
        let xy = Vector2::new(step(cols, c), step(rows, r))
            + Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let toward = if xy.norm() > 0.05 * spec.extent {
            (-xy.y).atan2(-xy.x) + rng.random_range(-0.5..0.5)
        } else {
            rng.random_range(-PI..PI)
        };
        let pitch = rng.random_range(45f64.to_radians()..80f64.to_radians());
        let center = Vector3::new(xy.x, xy.y, spec.aerial_height);
        out.push((
            AltitudeClass::Aerial,
            PoseSE3::new(camera_rotation(normalize_angle(toward), pitch), center),
        ));
    }
    out
}

/// Noise-free pixel of a landmark, if it lies inside the horizontal field of
/// view and the image.
fn visible_pixel(
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    view: &View,
    x: &Vector3<f64>,
) -> Option<Vector2<f64>> {
    let pc = pose.world_to_optical(x);
    if pc.z <= 1e-3 || pc.x.atan2(pc.z).abs() > HALF_FOV {
        return None;
    }
    k.project(&pc).filter(|uv| view.contains(uv))
}

/// Generates a scene. Scenes where some view sees no landmark are redrawn
/// from the continuing random stream, up to 10 attempts.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut warnings = Vec::new();
    for attempt in 1..=MAX_ATTEMPTS {
        match try_generate(spec, &mut rng) {
            Some(mut scene) => {
                scene.warnings = warnings;
                return Ok(scene);
            }
            None => {
                let w = format!("attempt {attempt}: a view sees no landmark or the seam has no view pair, regenerating");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    Err(SynthError::EmptyView(MAX_ATTEMPTS))
}

fn try_generate(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<SyntheticScene> {
    let (w, h) = (spec.image_width, spec.image_height);
    let e = spec.extent;
    let mut landmarks: Vec<Vector3<f64>> = (0..spec.n_points)
        .map(|_| {
            Vector3::new(
                rng.random_range(-e / 2.0..e / 2.0),
                rng.random_range(-e / 2.0..e / 2.0),
                rng.random_range(0.0..e / 10.0),
            )
        })
        .collect();
    let cams = place_cameras(spec, rng);
    if let Some(n) = spec.seam_landmarks {
        landmarks.extend(seam_edge(spec, &cams, n, rng)?);
    }
    let pixel_noise = Normal::new(0.0, spec.pixel_noise_sigma).expect("sigma validated");

    let mut views = Vec::new();
    let mut poses = BTreeMap::new();
    let mut keypoints = KeypointTable::default();
    let mut keypoint_landmark = BTreeMap::new();
    // Per view: landmark -> keypoint id.
    let mut seen: Vec<BTreeMap<usize, KeypointId>> = Vec::new();
    let (mut n_ground, mut n_aerial) = (0, 0);
    for (i, (class, pose)) in cams.iter().enumerate() {
        let id = i as ViewId;
        let name = match class {
            AltitudeClass::Ground => {
                n_ground += 1;
                format!("ground_{:03}", n_ground - 1)
            }
            _ => {
                n_aerial += 1;
                format!("aerial_{:03}", n_aerial - 1)
            }
        };
        let k = CameraIntrinsics::centered(initial_focal(h, w), w, h);
        let view = View {
            view_id: id,
            name,
            width: w,
            height: h,
            altitude: *class,
            intrinsics: k,
            pose: None,
        };
        let mut visible = BTreeMap::new();
        for (j, x) in landmarks.iter().enumerate() {
            let Some(uv) = visible_pixel(pose, &k, &view, x) else {
                continue;
            };
            let noisy = uv + Vector2::new(pixel_noise.sample(rng), pixel_noise.sample(rng));
            if !view.contains(&noisy) {
                continue;
            }
            let kp = visible.len() as KeypointId;
            keypoints.insert(Keypoint {
                view_id: id,
                keypoint_id: kp,
                position: noisy,
            });
            keypoint_landmark.insert((id, kp), j);
            visible.insert(j, kp);
        }
        if visible.is_empty() {
            return None;
        }
        seen.push(visible);
        poses.insert(id, *pose);
        views.push(view);
    }

    // True matches per pair.
    let n = views.len();
    let mut true_pairs: BTreeMap<(usize, usize), Vec<(KeypointId, KeypointId)>> = BTreeMap::new();
    for a in 0..n {
        for b in a + 1..n {
            let m: Vec<_> = seen[a]
                .iter()
                .filter_map(|(j, ka)| seen[b].get(j).map(|kb| (*ka, *kb)))
                .collect();
            if !m.is_empty() {
                true_pairs.insert((a, b), m);
            }
        }
    }
    if spec.seam_landmarks.is_some() {
        true_pairs.retain(|(a, b), _| views[*a].altitude == views[*b].altitude);
        let bridge: Vec<usize> = (spec.n_points..landmarks.len()).collect();
        let mut best: Option<(usize, (usize, usize))> = None;
        for a in 0..n {
            for b in a + 1..n {
                if views[a].altitude == views[b].altitude {
                    continue;
                }
                let c = bridge
                    .iter()
                    .filter(|j| seen[a].contains_key(j) && seen[b].contains_key(j))
                    .count();
                if c > best.map_or(0, |x| x.0) {
                    best = Some((c, (a, b)));
                }
            }
        }
        let (_, (a, b)) = best?;
        let m = bridge
            .iter()
            .filter_map(|j| Some((*seen[a].get(j)?, *seen[b].get(j)?)))
            .collect();
        true_pairs.insert((a, b), m);
    }

    let mut matches = MatchSet::new();
    let mut labels = OutlierLabels::default();
    let f = spec.outlier_fraction;
    for ((a, b), inliers) in &true_pairs {
        let (va, vb) = (*a as ViewId, *b as ViewId);
        let n_out = (f * inliers.len() as f64 / (1.0 - f)).round() as usize;
        let used_a: BTreeSet<KeypointId> = inliers.iter().map(|m| m.0).collect();
        let used_b: BTreeSet<KeypointId> = inliers.iter().map(|m| m.1).collect();
        let mut pool_a: Vec<KeypointId> = (0..keypoints.count(va) as KeypointId)
            .filter(|k| !used_a.contains(k))
            .collect();
        let mut pool_b: Vec<KeypointId> = (0..keypoints.count(vb) as KeypointId)
            .filter(|k| !used_b.contains(k))
            .collect();
        let mut all: Vec<(KeypointId, KeypointId, bool)> =
            inliers.iter().map(|(x, y)| (*x, *y, false)).collect();
        for _ in 0..n_out {
            let ka = draw_unused(&mut pool_a, &mut keypoints, &views[*a], rng);
            let kb = draw_unused(&mut pool_b, &mut keypoints, &views[*b], rng);
            labels.matches.insert((va, vb, ka, kb));
            all.push((ka, kb, true));
        }
        all.shuffle(rng);
        let pair = matches.pair_mut(va, vb);
        for (ka, kb, _) in all {
            pair.matches.push(Match {
                kp_a: ka,
                kp_b: kb,
                score: rng.random_range(0.5..1.0),
            });
        }
    }

    let priors = make_priors(spec, &views, &poses, rng, &mut labels);
    Some(SyntheticScene {
        views,
        keypoints,
        matches,
        priors,
        poses,
        landmarks,
        keypoint_landmark,
        labels,
        warnings: Vec::new(),
    })
}

/// Landmarks along a horizontal edge `extent / 30` long at `extent / 20`
/// height, with 1 cm jitter, placed where the most views of the weaker band
/// can see it.
fn seam_edge(
    spec: &SceneSpec,
    cams: &[(AltitudeClass, PoseSE3)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vector3<f64>>> {
    let (w, h) = (spec.image_width, spec.image_height);
    let k = CameraIntrinsics::centered(initial_focal(h, w), w, h);
    let probe = View {
        view_id: 0,
        name: String::new(),
        width: w,
        height: h,
        altitude: AltitudeClass::Ground,
        intrinsics: k,
        pose: None,
    };
    let e = spec.extent;
    let z = e / 20.0;
    let mut best: Option<((usize, usize), Vector3<f64>)> = None;
    for i in 0..=20 {
        for j in 0..=20 {
            let p = Vector3::new(
                -e / 2.0 + e * i as f64 / 20.0,
                -e / 2.0 + e * j as f64 / 20.0,
                z,
            );
            let (mut g, mut a) = (0, 0);
            for (class, pose) in cams {
                if visible_pixel(pose, &k, &probe, &p).is_some() {
                    match class {
                        AltitudeClass::Ground => g += 1,
                        _ => a += 1,
                    }
                }
            }
            let score = (g.min(a), g + a);
            if score.0 > 0 && best.is_none_or(|b| score > b.0) {
                best = Some((score, p));
            }
        }
    }
    let (_, center) = best?;
    let dir = rng.random_range(-PI..PI);
    let along = Vector3::new(dir.cos(), dir.sin(), 0.0);
    let half = e / 60.0;
    Some(
        (0..n)
            .map(|i| {
                let t = if n > 1 {
                    -1.0 + 2.0 * i as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                let jitter = Vector3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                );
                center + along * (t * half) + jitter
            })
            .collect(),
    )
}

/// Removes a random keypoint from `pool`, or adds a clutter keypoint to the
/// view when the pool is exhausted.
fn draw_unused(
    pool: &mut Vec<KeypointId>,
    keypoints: &mut KeypointTable,
    view: &View,
    rng: &mut ChaCha8Rng,
) -> KeypointId {
    if !pool.is_empty() {
        let i = rng.random_range(0..pool.len());
        return pool.swap_remove(i);
    }
    let kp = keypoints.count(view.view_id) as KeypointId;
    keypoints.insert(Keypoint {
        view_id: view.view_id,
        keypoint_id: kp,
        position: Vector2::new(
            rng.random_range(0.0..view.width as f64),
            rng.random_range(0.0..view.height as f64),
        ),
    });
    kp
}

fn make_priors(
    spec: &SceneSpec,
    views: &[View],
    poses: &BTreeMap<ViewId, PoseSE3>,
    rng: &mut ChaCha8Rng,
    labels: &mut OutlierLabels,
) -> Vec<GeometricPrior> {
    let xy_noise = Normal::new(0.0, spec.prior_noise.xy).expect("sigma validated");
    let yaw_noise = Normal::new(0.0, spec.prior_noise.yaw).expect("sigma validated");
    let n_out = (spec.prior_outlier_fraction * views.len() as f64).round() as usize;
    let mut ids: Vec<ViewId> = views.iter().map(|v| v.view_id).collect();
    ids.shuffle(rng);
    let outliers: BTreeSet<ViewId> = ids.into_iter().take(n_out).collect();
    let mut priors = Vec::new();
    for v in views {
        let pose = &poses[&v.view_id];
        let c = pose.center();
        let mut x = c.x + xy_noise.sample(rng);
        let mut y = c.y + xy_noise.sample(rng);
        let mut yaw = crate::geometry::yaw_of(&pose.rotation) + yaw_noise.sample(rng);
        if outliers.contains(&v.view_id) {
            let r = 10.0 * spec.prior_noise.xy.max(0.1) * rng.random_range(1.0..2.0);
            let dir = rng.random_range(-PI..PI);
            x += r * dir.cos();
            y += r * dir.sin();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            yaw += sign * 10.0 * spec.prior_noise.yaw.max(0.01) * rng.random_range(1.0..2.0);
            labels.priors.insert(v.view_id);
        }
        priors.push(GeometricPrior::new(v.view_id, x, y, normalize_angle(yaw)));
    }
    priors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_correspondences, parse_ground_truth, parse_labels, parse_priors};

    fn small() -> SceneSpec {
        SceneSpec {
            n_ground: 4,
            n_aerial: 4,
            n_points: 300,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn noise_free_observations_are_exact() {
        let s = generate_scene(&small()).unwrap();
        for kp in s.keypoints.iter() {
            let j = s.keypoint_landmark[&(kp.view_id, kp.keypoint_id)];
            let view = &s.views[kp.view_id as usize];
            let pc = s.poses[&kp.view_id].world_to_optical(&s.landmarks[j]);
            let uv = view.intrinsics.project(&pc).unwrap();
            assert!((uv - kp.position).norm() < 1e-9);
        }
    }

    #[test]
    fn matches_are_true_unless_labeled() {
        let spec = SceneSpec {
            outlier_fraction: 0.3,
            pixel_noise_sigma: 1.0,
            ..small()
        };
        let s = generate_scene(&spec).unwrap();
        let (mut total, mut bad) = (0, 0);
        for p in s.matches.iter() {
            for m in &p.matches {
                total += 1;
                let la = s.keypoint_landmark.get(&(p.view_a, m.kp_a));
                let lb = s.keypoint_landmark.get(&(p.view_b, m.kp_b));
                let labeled = s
                    .labels
                    .matches
                    .contains(&(p.view_a, p.view_b, m.kp_a, m.kp_b));
                assert_eq!(labeled, la.is_none() || la != lb);
                bad += labeled as usize;
            }
        }
        let ratio = bad as f64 / total as f64;
        assert!((ratio - 0.3).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn files_parse_without_warnings() {
        let spec = SceneSpec {
            outlier_fraction: 0.2,
            pixel_noise_sigma: 0.5,
            prior_noise: PriorNoise { xy: 1.0, yaw: 0.05 },
            prior_outlier_fraction: 0.25,
            ..small()
        };
        let s = generate_scene(&spec).unwrap();
        let f = s.files();
        let c = parse_correspondences(&f.correspondences, 0.0).unwrap();
        assert!(c.warnings.is_empty(), "{:?}", c.warnings);
        assert_eq!(c.views.len(), 8);
        assert_eq!(c.matches, s.matches);
        assert_eq!(c.keypoints, s.keypoints);
        let (p, w) = parse_priors(&f.priors, None).unwrap();
        assert!(w.is_empty());
        assert_eq!(p, s.priors);
        let gt = parse_ground_truth(&f.ground_truth)
            .unwrap()
            .positions(None)
            .unwrap();
        assert_eq!(gt, s.centers());
        assert_eq!(parse_labels(&f.labels).unwrap(), s.labels);
        assert_eq!(s.labels.priors.len(), 2);
    }

    #[test]
    fn prior_outliers_are_displaced() {
        let spec = SceneSpec {
            prior_noise: PriorNoise { xy: 0.5, yaw: 0.02 },
            prior_outlier_fraction: 0.25,
            ..small()
        };
        let s = generate_scene(&spec).unwrap();
        for p in &s.priors {
            let c = s.poses[&p.view_id].center();
            let d = (Vector2::new(p.x, p.y) - c.xy()).norm();
            if s.labels.priors.contains(&p.view_id) {
                // 10 sigma displacement less a generous noise margin.
                assert!(d > 5.0 - 3.0, "{d}");
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SceneSpec {
            outlier_fraction: 0.1,
            pixel_noise_sigma: 1.0,
            ..small()
        };
        assert_eq!(
            generate_scene(&spec).unwrap().files(),
            generate_scene(&spec).unwrap().files()
        );
    }

    #[test]
    fn invalid_spec() {
        for spec in [
            SceneSpec {
                outlier_fraction: 1.5,
                ..SceneSpec::default()
            },
            SceneSpec {
                prior_outlier_fraction: 1.0,
                ..SceneSpec::default()
            },
            SceneSpec {
                pixel_noise_sigma: -1.0,
                ..SceneSpec::default()
            },
        ] {
            assert!(matches!(
                generate_scene(&spec),
                Err(SynthError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn seam_is_one_pair() {
        let spec = SceneSpec {
            seam_landmarks: Some(10),
            ..small()
        };
        let s = generate_scene(&spec).unwrap();
        let cross: usize = s
            .matches
            .iter()
            .filter(|p| s.altitude(p.view_a) != s.altitude(p.view_b))
            .map(|p| p.matches.len())
            .sum();
        let pairs = s
            .matches
            .iter()
            .filter(|p| s.altitude(p.view_a) != s.altitude(p.view_b))
            .count();
        assert!(cross <= 10 && cross >= 3, "{cross}");
        assert_eq!(pairs, 1);
        assert_eq!(s.landmarks.len(), 310);
    }
}
