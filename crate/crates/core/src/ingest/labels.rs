use std::collections::BTreeSet;
use std::fmt::Write;

use super::{arity, body, field, IngestError};
use crate::model::{KeypointId, ViewId};

const MAGIC: &str = "CVDSFM-LABELS";

/// Ground-truth outlier labels written next to a synthetic scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutlierLabels {
    /// `(view_a, view_b, kp_a, kp_b)` with `view_a < view_b`.
    pub matches: BTreeSet<(ViewId, ViewId, KeypointId, KeypointId)>,
    pub priors: BTreeSet<ViewId>,
}

pub fn parse_labels(text: &str) -> Result<OutlierLabels, IngestError> {
    let mut out = OutlierLabels::default();
    for (n, t) in body(text, MAGIC, false)? {
        match t[0] {
            "O" => {
                arity(&t, &[5], n)?;
                let va: ViewId = field(&t, 1, n, "view a")?;
                let vb: ViewId = field(&t, 2, n, "view b")?;
                let ka: KeypointId = field(&t, 3, n, "keypoint a")?;
                let kb: KeypointId = field(&t, 4, n, "keypoint b")?;
                let key = if va < vb {
                    (va, vb, ka, kb)
                } else {
                    (vb, va, kb, ka)
                };
                out.matches.insert(key);
            }
            "PO" => {
                arity(&t, &[2], n)?;
                out.priors.insert(field(&t, 1, n, "view id")?);
            }
            other => return Err(IngestError::at(n, format!("unknown record type '{other}'"))),
        }
    }
    Ok(out)
}

pub fn write_labels(labels: &OutlierLabels) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} 1").unwrap();
    for (va, vb, ka, kb) in &labels.matches {
        writeln!(s, "O {va} {vb} {ka} {kb}").unwrap();
    }
    for v in &labels.priors {
        writeln!(s, "PO {v}").unwrap();
    }
    s
}
