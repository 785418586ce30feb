//! Incremental reconstruction: pair verification, initialization, next-best-view
//! registration and the bundle adjustment schedule.

mod incremental;
pub mod nbv;
pub mod pnp;

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::incremental::{final_inlier_matches, run_incremental, EngineOutput, RunStats};
pub use self::nbv::{
    nbv_score, nbv_scores, next_best_view, FeatureWeightMode, NbvCandidate, NbvConfig,
};
pub use self::pnp::{
    p3p, pose_uncertainty, register_view_pnp, NeighborPrior, PnpConfig, PnpError, PnpResult,
    PosePrior,
};
use crate::ba::BaConfig;
use crate::model::{GeometricPrior, KeypointTable, MatchPair, MatchSet, PoseSE3, View, ViewId};
use crate::triangulate::TriangulationConfig;
use crate::twoview::{estimate_essential_ransac, normalized_matches, TwoViewConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("no view pair qualifies for initialization")]
    NoValidPair,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub seed: u64,
    /// Pairs with fewer matches are not verified; verified pairs keep only
    /// their epipolar inliers and need at least this many.
    pub min_pair_inliers: usize,
    pub min_init_matches: usize,
    pub min_init_inlier_ratio: f64,
    /// Triangulated points the initial pair must produce.
    pub min_init_points: usize,
    pub local_ba_window: usize,
    pub global_ba_interval: usize,
    /// Heights of the lifted prior poses.
    pub ground_height: f64,
    pub aerial_height: f64,
    /// Registered views with priors needed before the model is moved into the prior frame.
    pub min_georef_views: usize,
    pub twoview: TwoViewConfig,
    pub triangulation: TriangulationConfig,
    pub pnp: PnpConfig,
    pub nbv: NbvConfig,
    pub ba: BaConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_pair_inliers: 15,
            min_init_matches: 100,
            min_init_inlier_ratio: 0.5,
            min_init_points: 20,
            local_ba_window: 8,
            global_ba_interval: 5,
            ground_height: 1.7,
            aerial_height: 30.0,
            min_georef_views: 3,
            twoview: TwoViewConfig::default(),
            triangulation: TriangulationConfig::default(),
            pnp: PnpConfig::default(),
            nbv: NbvConfig::default(),
            ba: BaConfig::default(),
        }
    }
}

/// Bootstrap focal length, `1.2 * max(H, W)` pixels.
pub fn initial_focal(height: u32, width: u32) -> f64 {
    1.2 * height.max(width) as f64
}

pub fn count_matches(pair: &MatchPair) -> usize {
    pair.matches.len()
}

/// Yaw-only rotation from the prior heading, center `(x, y, z)`.
pub fn prior_to_initial_pose(prior: &GeometricPrior, z: f64) -> PoseSE3 {
    prior.to_pose(z)
}

/// Independent random stream for one unit of work.
pub(crate) fn stream_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag ^ mix(a ^ mix(b)))))
}

/// Outcome of robust essential estimation on one view pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVerification {
    pub view_a: ViewId,
    pub view_b: ViewId,
    pub n_matches: usize,
    /// Indices into the pair's match list.
    pub inliers: Vec<usize>,
    pub inlier_ratio: f64,
    pub low_parallax: bool,
    pub essential: Option<Matrix3<f64>>,
}

impl PairVerification {
    pub fn verified(&self, min_inliers: usize) -> bool {
        self.inliers.len() >= min_inliers
    }
}

/// Runs essential-matrix RANSAC on every pair with at least
/// `cfg.min_pair_inliers` matches, in parallel with one seeded stream per pair.
pub fn verify_pairs(
    views: &BTreeMap<ViewId, View>,
    keypoints: &KeypointTable,
    matches: &MatchSet,
    cfg: &EngineConfig,
) -> Vec<PairVerification> {
    let pairs: Vec<&MatchPair> = matches
        .iter()
        .filter(|p| count_matches(p) >= cfg.min_pair_inliers.max(5))
        .filter(|p| views.contains_key(&p.view_a) && views.contains_key(&p.view_b))
        .collect();
    pairs
        .par_iter()
        .map(|pair| {
            let ki = &views[&pair.view_a].intrinsics;
            let kj = &views[&pair.view_b].intrinsics;
            let (xi, xj, idx) = normalized_matches(pair, keypoints, ki, kj);
            let mut rng = stream_rng(cfg.seed, 1, pair.view_a as u64, pair.view_b as u64);
            let n = count_matches(pair);
            match estimate_essential_ransac(&xi, &xj, &cfg.twoview, &mut rng) {
                Ok(est) => PairVerification {
                    view_a: pair.view_a,
                    view_b: pair.view_b,
                    n_matches: n,
                    inlier_ratio: est.inlier_ratio(n),
                    inliers: est.inlier_indices.iter().map(|&k| idx[k]).collect(),
                    low_parallax: est.low_parallax,
                    essential: Some(est.e),
                },
                Err(_) => PairVerification {
                    view_a: pair.view_a,
                    view_b: pair.view_b,
                    n_matches: n,
                    inliers: Vec::new(),
                    inlier_ratio: 0.0,
                    low_parallax: false,
                    essential: None,
                },
            }
        })
        .collect()
}

/// Pairs eligible for initialization, best first: enough matches, inlier
/// ratio at least `min_ratio`, not low-parallax; ordered by inlier count,
/// then inlier ratio, then view ids.
pub fn rank_initial_pairs(
    pairs: &[PairVerification],
    min_matches: usize,
    min_ratio: f64,
) -> Vec<(ViewId, ViewId)> {
    let mut ok: Vec<&PairVerification> = pairs
        .iter()
        .filter(|p| p.n_matches >= min_matches && p.inlier_ratio >= min_ratio && !p.low_parallax)
        .collect();
    ok.sort_by(|a, b| {
        b.inliers
            .len()
            .cmp(&a.inliers.len())
            .then(b.inlier_ratio.total_cmp(&a.inlier_ratio))
            .then((a.view_a, a.view_b).cmp(&(b.view_a, b.view_b)))
    });
    ok.iter().map(|p| (p.view_a, p.view_b)).collect()
}

pub fn select_initial_pair(
    pairs: &[PairVerification],
    min_matches: usize,
    min_ratio: f64,
) -> Result<(ViewId, ViewId), EngineError> {
    rank_initial_pairs(pairs, min_matches, min_ratio)
        .first()
        .copied()
        .ok_or(EngineError::NoValidPair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::yaw_of;
    use std::f64::consts::FRAC_PI_2;

    fn pv(a: ViewId, b: ViewId, inliers: usize, n: usize, low: bool) -> PairVerification {
        PairVerification {
            view_a: a,
            view_b: b,
            n_matches: n,
            inliers: (0..inliers).collect(),
            inlier_ratio: inliers as f64 / n as f64,
            low_parallax: low,
            essential: None,
        }
    }

    #[test]
    fn focal_bootstrap() {
        assert_eq!(initial_focal(1080, 1920), 2304.0);
        assert_eq!(initial_focal(2160, 3840), 4608.0);
        assert_eq!(initial_focal(100, 100), 120.0);
    }

    #[test]
    fn initial_pair_argmax() {
        let p = [
            pv(0, 1, 120, 150, false),
            pv(0, 2, 340, 400, false),
            pv(1, 2, 95, 120, false),
        ];
        assert_eq!(select_initial_pair(&p, 100, 0.5), Ok((0, 2)));
    }

    #[test]
    fn initial_pair_skips_low_parallax() {
        let p = [
            pv(0, 1, 120, 150, false),
            pv(0, 2, 340, 400, true),
            pv(1, 2, 95, 120, false),
        ];
        assert_eq!(select_initial_pair(&p, 100, 0.5), Ok((0, 1)));
    }

    #[test]
    fn initial_pair_needs_matches() {
        let p = [pv(0, 1, 60, 80, false), pv(0, 2, 90, 99, false)];
        assert_eq!(
            select_initial_pair(&p, 100, 0.5),
            Err(EngineError::NoValidPair)
        );
    }

    #[test]
    fn initial_pair_ties() {
        let p = [
            pv(3, 4, 200, 400, false),
            pv(1, 2, 200, 250, false),
            pv(0, 5, 200, 250, false),
        ];
        assert_eq!(select_initial_pair(&p, 100, 0.5), Ok((0, 5)));
    }

    #[test]
    fn prior_pose() {
        let id = prior_to_initial_pose(&GeometricPrior::new(0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(id, PoseSE3::identity());
        let p = prior_to_initial_pose(&GeometricPrior::new(0, 3.0, -2.0, FRAC_PI_2), 1.7);
        let x = p.rotation * nalgebra::Vector3::x();
        assert!((x - nalgebra::Vector3::y()).norm() < 1e-15);
        assert_eq!(p.translation, nalgebra::Vector3::new(3.0, -2.0, 1.7));
        for yaw in [-3.0, -1.0, 0.0, 0.5, 3.1] {
            let r = prior_to_initial_pose(&GeometricPrior::new(0, 0.0, 0.0, yaw), 0.0);
            assert!((yaw_of(&r.rotation) - yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pair_counts_zero() {
        assert_eq!(count_matches(&MatchPair::new(0, 1)), 0);
    }
}
