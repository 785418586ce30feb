//! Run configuration: every engine tunable plus ingestion and evaluation
//! settings, loaded from TOML and overridable with dotted `key=value` pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::engine::EngineConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("override '{0}': expected key=value")]
    Override(String),
    #[error("override '{key}': {message}")]
    UnknownKey { key: String, message: String },
    #[error("config: {0}")]
    Range(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Matches scoring below this are dropped at ingestion.
    pub score_floor: f64,
    /// Worker threads; `None` uses the machine's parallelism.
    pub workers: Option<usize>,
    pub include_satellite_in_coverage: bool,
    pub engine: EngineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            score_floor: 0.0,
            workers: None,
            include_satellite_in_coverage: false,
            engine: EngineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides in order. Values are parsed as
    /// TOML and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc: Table = toml::from_str(&self.to_toml()).expect("config round-trips");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.split('.').collect();
            let (leaf, parents) = path.split_last().expect("split yields one element");
            let mut table = &mut doc;
            for p in parents {
                table = match table.get_mut(*p) {
                    Some(Value::Table(t)) => t,
                    _ => {
                        return Err(ConfigError::UnknownKey {
                            key: key.to_string(),
                            message: format!("no section '{p}'"),
                        })
                    }
                };
            }
            table.insert(leaf.to_string(), value);
        }
        let cfg: RunConfig =
            Value::Table(doc)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::UnknownKey {
                    key: overrides
                        .iter()
                        .map(|o| o.as_ref())
                        .collect::<Vec<_>>()
                        .join(", "),
                    message: e.to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        let w = &e.ba.weights;
        let checks: [(bool, &str); 18] = [
            (
                (0.0..=1.0).contains(&self.score_floor),
                "score_floor must be in [0, 1]",
            ),
            (self.workers != Some(0), "workers must be positive"),
            (
                e.min_pair_inliers >= 5,
                "engine.min_pair_inliers must be at least 5",
            ),
            (
                (0.0..=1.0).contains(&e.min_init_inlier_ratio),
                "engine.min_init_inlier_ratio must be in [0, 1]",
            ),
            (
                e.local_ba_window >= 1,
                "engine.local_ba_window must be positive",
            ),
            (
                e.global_ba_interval >= 1,
                "engine.global_ba_interval must be positive",
            ),
            (
                e.min_georef_views >= 3,
                "engine.min_georef_views must be at least 3",
            ),
            (
                e.twoview.inlier_threshold > 0.0,
                "engine.twoview.inlier_threshold must be positive",
            ),
            (
                e.twoview.tukey_cutoff.is_none_or(|c| c > 0.0),
                "engine.twoview.tukey_cutoff must be positive",
            ),
            (
                e.twoview.confidence > 0.0 && e.twoview.confidence < 1.0,
                "engine.twoview.confidence must be in (0, 1)",
            ),
            (
                e.pnp.threshold_px > 0.0,
                "engine.pnp.threshold_px must be positive",
            ),
            (
                e.pnp.min_inliers >= 4,
                "engine.pnp.min_inliers must be at least 4",
            ),
            (
                e.pnp.confidence > 0.0 && e.pnp.confidence < 1.0,
                "engine.pnp.confidence must be in (0, 1)",
            ),
            (e.nbv.lambda >= 0.0, "engine.nbv.lambda must be >= 0"),
            (
                w.lambda_t >= 0.0 && w.lambda_r >= 0.0 && w.lambda_m >= 0.0,
                "engine.ba.weights lambdas must be >= 0",
            ),
            (
                w.alpha >= 0.0 && w.beta >= 0.0,
                "engine.ba.weights alpha and beta must be >= 0",
            ),
            (e.ba.huber_px > 0.0, "engine.ba.huber_px must be positive"),
            (
                e.ba.focal_bounds[0] > 0.0 && e.ba.focal_bounds[0] < e.ba.focal_bounds[1],
                "engine.ba.focal_bounds must be increasing and positive",
            ),
        ];
        for (ok, message) in checks {
            if !ok {
                return Err(ConfigError::Range(message.to_string()));
            }
        }
        if !(e.triangulation.max_reproj_px > 0.0 && e.triangulation.min_angle_deg >= 0.0) {
            return Err(ConfigError::Range(
                "engine.triangulation thresholds out of range".into(),
            ));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[engine]\nlambda = 1").is_err());
        assert!(RunConfig::default()
            .with_overrides(&["engine.nope=1"])
            .is_err());
        assert!(RunConfig::default()
            .with_overrides(&["nosection.x=1"])
            .is_err());
    }

    #[test]
    fn overrides_match_file() {
        let file = RunConfig::from_toml(
            "workers = 3\n[engine.nbv]\nlambda = 0.25\n[engine.ba.weights]\nalpha = 0.1\n",
        )
        .unwrap();
        let flags = RunConfig::default()
            .with_overrides(&[
                "workers=3",
                "engine.nbv.lambda=0.25",
                "engine.ba.weights.alpha = 0.1",
            ])
            .unwrap();
        assert_eq!(file, flags);
        let later = file.with_overrides(&["engine.nbv.lambda=0"]).unwrap();
        assert_eq!(later.engine.nbv.lambda, 0.0);
        let mode = file
            .with_overrides(&["engine.nbv.feature_weight_mode=score_weighted"])
            .unwrap();
        assert_eq!(
            mode.engine.nbv.feature_weight_mode,
            crate::engine::FeatureWeightMode::ScoreWeighted
        );
    }

    #[test]
    fn ranges_checked() {
        assert!(matches!(
            RunConfig::default().with_overrides(&["engine.nbv.lambda=-1"]),
            Err(ConfigError::Range(_))
        ));
        assert!(RunConfig::from_toml("score_floor = 1.5").is_err());
        assert!(RunConfig::default().with_overrides(&["seed"]).is_err());
    }
}
