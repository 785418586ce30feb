use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use toml::{Table, Value};

use super::{field, finite, tokenized, IngestError};
use crate::eval::MetricsReport;
use crate::model::{PoseSE3, Reconstruction, ViewId};

/// One row of a poses file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub pose: PoseSE3,
    pub focal: f64,
}

/// Poses of the registered views, one row per view ordered by id:
/// `view_id qw qx qy qz tx ty tz focal`. The quaternion is the body-to-world
/// rotation and `t` the camera center in the world frame.
pub fn write_poses(recon: &Reconstruction) -> String {
    let mut s = String::from("# view_id qw qx qy qz tx ty tz focal\n");
    for v in &recon.registered {
        let (Some(pose), Some(view)) = (recon.pose(*v), recon.views.get(v)) else {
            continue;
        };
        let q = pose.quaternion();
        let t = pose.translation;
        writeln!(
            s,
            "{v} {} {} {} {} {} {} {} {}",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z, view.intrinsics.focal
        )
        .unwrap();
    }
    s
}

pub fn parse_poses(text: &str) -> Result<BTreeMap<ViewId, PoseRecord>, IngestError> {
    let mut out = BTreeMap::new();
    for (n, t) in tokenized(text) {
        if t.len() != 9 {
            return Err(IngestError::at(
                n,
                format!("pose row has {} fields, expected 9", t.len()),
            ));
        }
        let v: ViewId = field(&t, 0, n, "view id")?;
        let mut x = [0.0; 8];
        for (k, name) in ["qw", "qx", "qy", "qz", "tx", "ty", "tz", "focal"]
            .iter()
            .enumerate()
        {
            x[k] = finite(field(&t, k + 1, n, name)?, n, name)?;
        }
        let q = Quaternion::new(x[0], x[1], x[2], x[3]);
        if q.norm() < 1e-9 {
            return Err(IngestError::at(n, "zero quaternion"));
        }
        let pose = PoseSE3::from_quaternion(
            &UnitQuaternion::from_quaternion(q),
            Vector3::new(x[4], x[5], x[6]),
        );
        if out.insert(v, PoseRecord { pose, focal: x[7] }).is_some() {
            return Err(IngestError::at(n, format!("second pose for view {v}")));
        }
    }
    Ok(out)
}

/// ASCII PLY of the triangulated points, ordered by track id.
pub fn write_ply(recon: &Reconstruction) -> String {
    let points: Vec<_> = recon.tracks.iter().filter_map(|t| t.point).collect();
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", points.len()).unwrap();
    for p in ["x", "y", "z"] {
        writeln!(s, "property double {p}").unwrap();
    }
    for c in ["red", "green", "blue"] {
        writeln!(s, "property uchar {c}").unwrap();
    }
    s.push_str("end_header\n");
    for p in points {
        let [r, g, b] = p.color.unwrap_or([255, 255, 255]);
        writeln!(
            s,
            "{} {} {} {r} {g} {b}",
            p.position.x, p.position.y, p.position.z
        )
        .unwrap();
    }
    s
}

/// Counts and timings of a reconstruction run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub n_input: usize,
    pub n_registered: usize,
    pub n_points: usize,
    pub n_observations: usize,
    pub pairs_tested: usize,
    pub pairs_verified: usize,
    pub tracks_admitted: usize,
    pub coverage_aerial: f64,
    pub coverage_ground: f64,
    pub coverage_total: f64,
    pub reproj_mean_px2: Option<f64>,
    pub reproj_rms_px: Option<f64>,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

/// Key/value report (TOML). Metric fields keep their names at the top level;
/// per-class metrics go under `[class.<name>]`, per-view errors under
/// `[[view_errors]]` and run counts under `[run]`.
pub fn write_report(metrics: Option<&MetricsReport>, run: Option<&RunSummary>) -> String {
    let mut doc = Table::new();
    if let Some(m) = metrics {
        doc.insert("rmse_min_m".into(), Value::Float(m.rmse_min_m));
        doc.insert("rmse_mean_m".into(), Value::Float(m.rmse_mean_m));
        doc.insert("rmse_max_m".into(), Value::Float(m.rmse_max_m));
        doc.insert("coverage_aerial".into(), Value::Float(m.coverage_aerial));
        doc.insert("coverage_ground".into(), Value::Float(m.coverage_ground));
        doc.insert("coverage_total".into(), Value::Float(m.coverage_total));
        if let Some(v) = m.reproj_mean_px2 {
            doc.insert("reproj_mean_px2".into(), Value::Float(v));
        }
        if let Some(v) = m.reproj_rms_px {
            doc.insert("reproj_rms_px".into(), Value::Float(v));
        }
        doc.insert("n_estimated".into(), int(m.n_estimated));
        doc.insert("n_input".into(), int(m.n_input));
        doc.insert("alignment_scale".into(), Value::Float(m.alignment.scale));
        let mut classes = Table::new();
        for (c, cm) in &m.per_class {
            let mut t = Table::new();
            t.insert("rmse_min_m".into(), Value::Float(cm.rmse_min_m));
            t.insert("rmse_mean_m".into(), Value::Float(cm.rmse_mean_m));
            t.insert("rmse_max_m".into(), Value::Float(cm.rmse_max_m));
            t.insert("coverage".into(), Value::Float(cm.coverage));
            t.insert("n_estimated".into(), int(cm.n_estimated));
            t.insert("n_input".into(), int(cm.n_input));
            t.insert("n_evaluated".into(), int(cm.n_evaluated));
            classes.insert(c.as_str().into(), Value::Table(t));
        }
        doc.insert("class".into(), Value::Table(classes));
        let errors: Vec<Value> = m
            .view_errors
            .iter()
            .map(|(v, e)| {
                let mut t = Table::new();
                t.insert("view_id".into(), Value::Integer(*v as i64));
                t.insert("error_m".into(), Value::Float(*e));
                Value::Table(t)
            })
            .collect();
        doc.insert("view_errors".into(), Value::Array(errors));
    }
    if let Some(r) = run {
        if metrics.is_none() {
            doc.insert("coverage_aerial".into(), Value::Float(r.coverage_aerial));
            doc.insert("coverage_ground".into(), Value::Float(r.coverage_ground));
            doc.insert("coverage_total".into(), Value::Float(r.coverage_total));
            if let Some(v) = r.reproj_mean_px2 {
                doc.insert("reproj_mean_px2".into(), Value::Float(v));
            }
            if let Some(v) = r.reproj_rms_px {
                doc.insert("reproj_rms_px".into(), Value::Float(v));
            }
            doc.insert("n_estimated".into(), int(r.n_registered));
            doc.insert("n_input".into(), int(r.n_input));
        }
        let mut t = Table::new();
        t.insert("n_points".into(), int(r.n_points));
        t.insert("n_observations".into(), int(r.n_observations));
        t.insert("pairs_tested".into(), int(r.pairs_tested));
        t.insert("pairs_verified".into(), int(r.pairs_verified));
        t.insert("tracks_admitted".into(), int(r.tracks_admitted));
        let mut timings = Table::new();
        for (stage, secs) in &r.timings {
            timings.insert(stage.clone(), Value::Float(*secs));
        }
        t.insert("seconds".into(), Value::Table(timings));
        doc.insert("run".into(), Value::Table(t));
    }
    toml::to_string(&doc).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use crate::model::{AltitudeClass, CameraIntrinsics, View};

    fn recon() -> Reconstruction {
        let views = (0..5)
            .map(|i| View {
                view_id: i,
                name: format!("v{i}"),
                width: 640,
                height: 480,
                altitude: AltitudeClass::Ground,
                intrinsics: CameraIntrinsics::centered(768.0, 640, 480),
                pose: None,
            })
            .collect();
        let mut r = Reconstruction::new(views, Vec::new(), Default::default());
        for i in 0..5 {
            let w = Vector3::new(0.1 * i as f64, -0.2, 0.3 * i as f64);
            r.register(
                i,
                PoseSE3::new(so3_exp(&w), Vector3::new(i as f64, 2.5, -1.0 / 3.0)),
            );
        }
        r
    }

    #[test]
    fn poses_roundtrip() {
        let r = recon();
        let parsed = parse_poses(&write_poses(&r)).unwrap();
        assert_eq!(parsed.len(), 5);
        for (v, rec) in &parsed {
            let p = r.pose(*v).unwrap();
            assert!((rec.pose.rotation - p.rotation).norm() < 1e-12);
            assert!((rec.pose.translation - p.translation).norm() < 1e-12);
            assert_eq!(rec.focal, 768.0);
        }
    }

    #[test]
    fn empty_outputs() {
        let r = Reconstruction::default();
        assert!(parse_poses(&write_poses(&r)).unwrap().is_empty());
        assert!(write_ply(&r).contains("element vertex 0"));
    }

    #[test]
    fn report_fields() {
        let run = RunSummary {
            n_input: 5,
            n_registered: 5,
            coverage_total: 1.0,
            ..RunSummary::default()
        };
        let text = write_report(None, Some(&run));
        let t: Table = text.parse().unwrap();
        assert_eq!(t["coverage_total"].as_float(), Some(1.0));
        assert_eq!(t["n_estimated"].as_integer(), Some(5));
    }
}
