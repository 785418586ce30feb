//! Next-best-view scoring: weighted visibility minus scaled pose uncertainty.

use serde::{Deserialize, Serialize};

use crate::model::ViewId;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureWeightMode {
    /// Every visible track counts 1.
    #[default]
    Uniform,
    /// Every visible track counts its mean match score.
    ScoreWeighted,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NbvConfig {
    pub lambda: f64,
    pub feature_weight_mode: FeatureWeightMode,
    /// Divide uncertainties by their median over the candidates.
    pub normalize_uncertainty: bool,
}

impl Default for NbvConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            feature_weight_mode: FeatureWeightMode::Uniform,
            normalize_uncertainty: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbvCandidate {
    pub view_id: ViewId,
    /// Sum of feature weights over the triangulated tracks the view observes.
    pub visibility: f64,
    pub n_observations: usize,
    /// Pose uncertainty; infinite when the provisional registration failed.
    pub uncertainty: f64,
}

pub fn nbv_score(visibility: f64, uncertainty: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return visibility;
    }
    visibility - lambda * uncertainty
}

/// Scores of all candidates, in input order. With normalization on, finite
/// uncertainties are divided by their median when that median is positive.
pub fn nbv_scores(candidates: &[NbvCandidate], cfg: &NbvConfig) -> Vec<f64> {
    let scale = if cfg.normalize_uncertainty {
        let mut finite: Vec<f64> = candidates
            .iter()
            .map(|c| c.uncertainty)
            .filter(|u| u.is_finite())
            .collect();
        finite.sort_by(f64::total_cmp);
        let m = match finite.len() {
            0 => 1.0,
            n if n % 2 == 1 => finite[n / 2],
            n => 0.5 * (finite[n / 2 - 1] + finite[n / 2]),
        };
        if m > 0.0 {
            m
        } else {
            1.0
        }
    } else {
        1.0
    };
    candidates
        .iter()
        .map(|c| nbv_score(c.visibility, c.uncertainty / scale, cfg.lambda))
        .collect()
}

/// Highest-scoring candidate. Ties go to more observations, then the lower
/// view id. Candidates with infinite uncertainty are never selected when
/// `lambda > 0`.
pub fn next_best_view(candidates: &[NbvCandidate], cfg: &NbvConfig) -> Option<ViewId> {
    let scores = nbv_scores(candidates, cfg);
    let mut best: Option<(f64, usize, ViewId)> = None;
    for (c, &s) in candidates.iter().zip(&scores) {
        if s.is_nan() || s == f64::NEG_INFINITY {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bn, bv)) => {
                s > bs
                    || (s == bs
                        && (c.n_observations > bn || (c.n_observations == bn && c.view_id < bv)))
            }
        };
        if better {
            best = Some((s, c.n_observations, c.view_id));
        }
    }
    best.map(|b| b.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(view_id: ViewId, n: usize, unc: f64) -> NbvCandidate {
        NbvCandidate {
            view_id,
            visibility: n as f64,
            n_observations: n,
            uncertainty: unc,
        }
    }

    #[test]
    fn raw_scores() {
        let cfg = NbvConfig {
            lambda: 1.0,
            normalize_uncertainty: false,
            ..NbvConfig::default()
        };
        let c = [cand(1, 10, 0.1), cand(2, 8, 0.0)];
        let s = nbv_scores(&c, &cfg);
        assert!((s[0] - 9.9).abs() < 1e-12);
        assert_eq!(s[1], 8.0);
        assert_eq!(next_best_view(&c, &cfg), Some(1));
    }

    #[test]
    fn zero_lambda_is_visibility() {
        let cfg = NbvConfig {
            lambda: 0.0,
            ..NbvConfig::default()
        };
        let c = [
            cand(1, 5, 0.0),
            cand(2, 9, 100.0),
            cand(3, 7, f64::INFINITY),
        ];
        assert_eq!(next_best_view(&c, &cfg), Some(2));
    }

    #[test]
    fn ties_prefer_lower_id() {
        let cfg = NbvConfig::default();
        let c = [cand(4, 6, 1.0), cand(2, 6, 1.0)];
        assert_eq!(next_best_view(&c, &cfg), Some(2));
    }

    #[test]
    fn failed_candidates_lose() {
        let cfg = NbvConfig::default();
        let c = [cand(1, 50, f64::INFINITY), cand(2, 5, 3.0)];
        assert_eq!(next_best_view(&c, &cfg), Some(2));
        assert_eq!(next_best_view(&c[..1], &cfg), None);
    }
}
