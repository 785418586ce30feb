use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write;

use super::{arity, body, field, finite, IngestError};
use crate::geometry::normalize_angle;
use crate::model::{GeometricPrior, ViewId};

const MAGIC: &str = "CVDSFM-PRIOR 1";

/// Parses a `CVDSFM-PRIOR 1` document. An entirely empty input yields no
/// priors. Yaw outside (-pi, pi] is wrapped with a warning. When `known_views`
/// is given, priors for other views are an error.
pub fn parse_priors(
    text: &str,
    known_views: Option<&BTreeSet<ViewId>>,
) -> Result<(Vec<GeometricPrior>, Vec<String>), IngestError> {
    let lines = body(text, "CVDSFM-PRIOR", true)?;
    let mut warnings = Vec::new();
    let mut priors: BTreeMap<ViewId, GeometricPrior> = BTreeMap::new();
    for (n, t) in lines {
        if t[0] != "P" {
            return Err(IngestError::at(
                n,
                format!("unknown record type '{}'", t[0]),
            ));
        }
        arity(&t, &[5, 6], n)?;
        let view_id: ViewId = field(&t, 1, n, "view id")?;
        let x = finite(field(&t, 2, n, "x")?, n, "x")?;
        let y = finite(field(&t, 3, n, "y")?, n, "y")?;
        let raw_yaw = finite(field(&t, 4, n, "yaw")?, n, "yaw")?;
        let confidence = if t.len() == 6 {
            finite(field(&t, 5, n, "confidence")?, n, "confidence")?
        } else {
            1.0
        };
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(IngestError::at(
                n,
                format!("confidence {confidence} outside (0, 1]"),
            ));
        }
        if let Some(known) = known_views {
            if !known.contains(&view_id) {
                return Err(IngestError::at(
                    n,
                    format!("prior for unknown view {view_id}"),
                ));
            }
        }
        if priors.contains_key(&view_id) {
            return Err(IngestError::at(
                n,
                format!("second prior for view {view_id}"),
            ));
        }
        let yaw = normalize_angle(raw_yaw);
        if !(raw_yaw > -PI && raw_yaw <= PI) {
            warnings.push(format!("line {n}: yaw {raw_yaw} normalized to {yaw}"));
        }
        priors.insert(
            view_id,
            GeometricPrior {
                view_id,
                x,
                y,
                yaw,
                confidence,
            },
        );
    }
    Ok((priors.into_values().collect(), warnings))
}

pub fn write_priors(priors: &[GeometricPrior]) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    let mut sorted: Vec<&GeometricPrior> = priors.iter().collect();
    sorted.sort_by_key(|p| p.view_id);
    for p in sorted {
        if p.confidence == 1.0 {
            writeln!(s, "P {} {} {} {}", p.view_id, p.x, p.y, p.yaw).unwrap();
        } else {
            writeln!(
                s,
                "P {} {} {} {} {}",
                p.view_id, p.x, p.y, p.yaw, p.confidence
            )
            .unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn single_line() {
        let (p, w) = parse_priors("CVDSFM-PRIOR 1\nP 7 12.5 -3.0 1.5708\n", None).unwrap();
        assert!(w.is_empty());
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].view_id, p[0].x, p[0].y), (7, 12.5, -3.0));
        assert!((p[0].yaw - FRAC_PI_2).abs() < 1e-4);
        assert_eq!(p[0].confidence, 1.0);
    }

    #[test]
    fn yaw_is_wrapped_with_warning() {
        let text = format!("CVDSFM-PRIOR 1\nP 1 0 0 {}\n", 3.0 * FRAC_PI_2);
        let (p, w) = parse_priors(&text, None).unwrap();
        assert!((p[0].yaw + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn empty_input() {
        assert!(parse_priors("", None).unwrap().0.is_empty());
        assert!(parse_priors("CVDSFM-PRIOR 1\n", None).unwrap().0.is_empty());
    }

    #[test]
    fn unknown_view() {
        let known: BTreeSet<ViewId> = [1, 2].into();
        let err = parse_priors("CVDSFM-PRIOR 1\nP 9 0 0 0\n", Some(&known)).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn roundtrip() {
        let mut a = GeometricPrior::new(3, 1.25, -7.5, 0.3);
        a.confidence = 0.5;
        let b = GeometricPrior::new(1, 0.1, 0.2, -3.0);
        let (p, _) = parse_priors(&write_priors(&[a, b]), None).unwrap();
        assert_eq!(p, vec![b, a]);
    }
}
