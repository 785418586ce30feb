use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use nalgebra::Vector2;

use super::{arity, body, field, finite, IngestError};
use crate::engine::initial_focal;
use crate::model::{
    AltitudeClass, CameraIntrinsics, Keypoint, KeypointTable, Match, MatchSet, View, ViewId,
};

const MAGIC: &str = "CVDSFM-CORR";

/// Parsed correspondence file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub views: Vec<View>,
    pub keypoints: KeypointTable,
    pub matches: MatchSet,
    /// Matches dropped by the score floor.
    pub filtered_matches: usize,
    pub warnings: Vec<String>,
}

/// Parses a `CVDSFM-CORR 1` document.
///
/// Views get centered intrinsics with the bootstrap focal. Matches are stored
/// with `view_a < view_b`; matches scoring below `score_floor` are dropped.
/// Within one pair a keypoint matched twice keeps its first match and the
/// rest are dropped with a warning.
pub fn parse_correspondences(text: &str, score_floor: f64) -> Result<Correspondences, IngestError> {
    let lines = body(text, MAGIC, false)?;
    let mut out = Correspondences::default();
    let mut views: BTreeMap<ViewId, View> = BTreeMap::new();
    let mut used: BTreeMap<(ViewId, ViewId), (BTreeSet<u32>, BTreeSet<u32>)> = BTreeMap::new();

    for (n, t) in lines {
        match t[0] {
            "V" => {
                arity(&t, &[6], n)?;
                let id: ViewId = field(&t, 1, n, "view id")?;
                let width: u32 = field(&t, 3, n, "width")?;
                let height: u32 = field(&t, 4, n, "height")?;
                if width == 0 || height == 0 {
                    return Err(IngestError::at(n, "image dimensions must be positive"));
                }
                let altitude: AltitudeClass =
                    t[5].parse().map_err(|e: String| IngestError::at(n, e))?;
                if views.contains_key(&id) {
                    return Err(IngestError::at(n, format!("duplicate view id {id}")));
                }
                views.insert(
                    id,
                    View {
                        view_id: id,
                        name: t[2].to_string(),
                        width,
                        height,
                        altitude,
                        intrinsics: CameraIntrinsics::centered(
                            initial_focal(height, width),
                            width,
                            height,
                        ),
                        pose: None,
                    },
                );
            }
            "K" => {
                arity(&t, &[5], n)?;
                let view_id: ViewId = field(&t, 1, n, "view id")?;
                let keypoint_id: u32 = field(&t, 2, n, "keypoint id")?;
                let u = finite(field(&t, 3, n, "u")?, n, "u")?;
                let v = finite(field(&t, 4, n, "v")?, n, "v")?;
                let view = views.get(&view_id).ok_or_else(|| {
                    IngestError::at(n, format!("keypoint references unknown view {view_id}"))
                })?;
                let position = Vector2::new(u, v);
                if !view.contains(&position) {
                    return Err(IngestError::at(
                        n,
                        format!("keypoint ({u}, {v}) outside image {view_id}"),
                    ));
                }
                if !out.keypoints.insert(Keypoint {
                    view_id,
                    keypoint_id,
                    position,
                }) {
                    return Err(IngestError::at(
                        n,
                        format!("duplicate keypoint {keypoint_id} in view {view_id}"),
                    ));
                }
            }
            "M" => {
                arity(&t, &[6], n)?;
                let va: ViewId = field(&t, 1, n, "view a")?;
                let vb: ViewId = field(&t, 2, n, "view b")?;
                let ka: u32 = field(&t, 3, n, "keypoint a")?;
                let kb: u32 = field(&t, 4, n, "keypoint b")?;
                let score = finite(field(&t, 5, n, "score")?, n, "score")?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(IngestError::at(n, format!("score {score} outside [0, 1]")));
                }
                if va == vb {
                    return Err(IngestError::at(n, "match within a single view"));
                }
                for (v, k) in [(va, ka), (vb, kb)] {
                    if out.keypoints.get(v, k).is_none() {
                        return Err(IngestError::at(
                            n,
                            format!("dangling reference to keypoint {k} of view {v}"),
                        ));
                    }
                }
                if score < score_floor {
                    out.filtered_matches += 1;
                    continue;
                }
                let (va, vb, ka, kb) = if va < vb {
                    (va, vb, ka, kb)
                } else {
                    (vb, va, kb, ka)
                };
                let seen = used.entry((va, vb)).or_default();
                if seen.0.contains(&ka) || seen.1.contains(&kb) {
                    out.warnings.push(format!(
                        "line {n}: keypoint matched twice in pair ({va}, {vb}); match dropped"
                    ));
                    continue;
                }
                seen.0.insert(ka);
                seen.1.insert(kb);
                out.matches.pair_mut(va, vb).matches.push(Match {
                    kp_a: ka,
                    kp_b: kb,
                    score,
                });
            }
            other => return Err(IngestError::at(n, format!("unknown record type '{other}'"))),
        }
    }
    out.views = views.into_values().collect();
    Ok(out)
}

/// Serializes views, keypoints and matches. Output order is by view id, then
/// keypoint id, then pair and input match order.
pub fn write_correspondences(
    views: &[View],
    keypoints: &KeypointTable,
    matches: &MatchSet,
) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} 1").unwrap();
    let mut sorted: Vec<&View> = views.iter().collect();
    sorted.sort_by_key(|v| v.view_id);
    for v in &sorted {
        writeln!(
            s,
            "V {} {} {} {} {}",
            v.view_id, v.name, v.width, v.height, v.altitude
        )
        .unwrap();
    }
    for kp in keypoints.iter() {
        writeln!(
            s,
            "K {} {} {} {}",
            kp.view_id, kp.keypoint_id, kp.position.x, kp.position.y
        )
        .unwrap();
    }
    for pair in matches.iter() {
        for m in &pair.matches {
            writeln!(
                s,
                "M {} {} {} {} {}",
                pair.view_a, pair.view_b, m.kp_a, m.kp_b, m.score
            )
            .unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "CVDSFM-CORR 1
# two views
V 0 a 100 80 ground
V 1 b 100 80 aerial
K 0 0 10 10
K 0 1 20 10.5
K 0 2 30 40
K 1 0 11 12
K 1 1 21 12
K 1 2 31 42
M 0 1 0 0 0.9
M 1 0 1 1 0.8
";

    #[test]
    fn small_file() {
        let c = parse_correspondences(SMALL, 0.0).unwrap();
        assert_eq!(c.views.len(), 2);
        assert_eq!(c.keypoints.len(), 6);
        assert_eq!(c.matches.len(), 1);
        let pair = c.matches.get(0, 1).unwrap();
        assert_eq!(pair.matches.len(), 2);
        // second match was given as 1 -> 0 and is stored canonically
        assert_eq!((pair.matches[1].kp_a, pair.matches[1].kp_b), (1, 1));
        assert_eq!(c.views[0].intrinsics.focal, 120.0);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn score_floor_filters() {
        let c = parse_correspondences(SMALL, 0.85).unwrap();
        assert_eq!(c.matches.total_matches(), 1);
        assert_eq!(c.filtered_matches, 1);
    }

    #[test]
    fn dangling_keypoint() {
        let text = SMALL.replace("M 1 0 1 1 0.8", "M 1 0 1 7 0.8");
        let err = parse_correspondences(&text, 0.0).unwrap_err();
        assert_eq!(err.line(), Some(12));
        assert!(err.to_string().contains("dangling"));
    }

    #[test]
    fn bad_header_names_line_one() {
        let err = parse_correspondences("CVDSFM-CORX 1\n", 0.0).unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn duplicate_view() {
        let text = SMALL.replace("V 1 b", "V 0 b");
        assert!(parse_correspondences(&text, 0.0)
            .unwrap_err()
            .to_string()
            .contains("duplicate view"));
    }

    #[test]
    fn roundtrip() {
        let c = parse_correspondences(SMALL, 0.0).unwrap();
        let text = write_correspondences(&c.views, &c.keypoints, &c.matches);
        let d = parse_correspondences(&text, 0.0).unwrap();
        assert_eq!(c, d);
    }
}
