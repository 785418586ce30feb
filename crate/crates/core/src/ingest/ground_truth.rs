use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::Vector3;

use super::{arity, body, field, finite, IngestError};
use crate::model::ViewId;

const MAGIC: &str = "CVDSFM-GT";

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;
/// Largest angular distance from the origin accepted by the tangent-plane conversion.
const MAX_OFFSET_DEG: f64 = 1.0;

/// Latitude and longitude in degrees, altitude in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundTruthRecord {
    Geodetic(Geodetic),
    Local(Vector3<f64>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub records: BTreeMap<ViewId, GroundTruthRecord>,
}

impl GroundTruth {
    /// Local positions for every record. Geodetic records are converted about
    /// `origin`, or about their mean when no origin is given.
    pub fn positions(
        &self,
        origin: Option<Geodetic>,
    ) -> Result<BTreeMap<ViewId, Vector3<f64>>, IngestError> {
        let geo: Vec<(ViewId, Geodetic)> = self
            .records
            .iter()
            .filter_map(|(v, r)| match r {
                GroundTruthRecord::Geodetic(g) => Some((*v, *g)),
                GroundTruthRecord::Local(_) => None,
            })
            .collect();
        let mut out: BTreeMap<ViewId, Vector3<f64>> =
            convert_gps_to_local(&geo, origin)?.into_iter().collect();
        for (v, r) in &self.records {
            if let GroundTruthRecord::Local(p) = r {
                out.insert(*v, *p);
            }
        }
        Ok(out)
    }
}

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth, IngestError> {
    let mut gt = GroundTruth::default();
    for (n, t) in body(text, MAGIC, false)? {
        let view: ViewId = field(&t, 1, n, "view id")?;
        let record = match t[0] {
            "G" => {
                arity(&t, &[5], n)?;
                let g = Geodetic {
                    lat: finite(field(&t, 2, n, "latitude")?, n, "latitude")?,
                    lon: finite(field(&t, 3, n, "longitude")?, n, "longitude")?,
                    alt: finite(field(&t, 4, n, "altitude")?, n, "altitude")?,
                };
                check_bounds(&g).map_err(|m| IngestError::at(n, m))?;
                GroundTruthRecord::Geodetic(g)
            }
            "GL" => {
                arity(&t, &[5], n)?;
                GroundTruthRecord::Local(Vector3::new(
                    finite(field(&t, 2, n, "x")?, n, "x")?,
                    finite(field(&t, 3, n, "y")?, n, "y")?,
                    finite(field(&t, 4, n, "z")?, n, "z")?,
                ))
            }
            other => return Err(IngestError::at(n, format!("unknown record type '{other}'"))),
        };
        if gt.records.insert(view, record).is_some() {
            return Err(IngestError::at(
                n,
                format!("second ground-truth record for view {view}"),
            ));
        }
    }
    Ok(gt)
}

pub fn write_ground_truth(gt: &GroundTruth) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} 1").unwrap();
    for (v, r) in &gt.records {
        match r {
            GroundTruthRecord::Geodetic(g) => {
                writeln!(s, "G {v} {} {} {}", g.lat, g.lon, g.alt).unwrap()
            }
            GroundTruthRecord::Local(p) => writeln!(s, "GL {v} {} {} {}", p.x, p.y, p.z).unwrap(),
        }
    }
    s
}

fn check_bounds(g: &Geodetic) -> Result<(), String> {
    if !(-90.0..=90.0).contains(&g.lat) {
        return Err(format!("latitude {} outside [-90, 90]", g.lat));
    }
    if !(-180.0..=180.0).contains(&g.lon) {
        return Err(format!("longitude {} outside [-180, 180]", g.lon));
    }
    Ok(())
}

fn wrap_degrees(d: f64) -> f64 {
    let x = (d + 180.0).rem_euclid(360.0) - 180.0;
    if x == -180.0 {
        180.0
    } else {
        x
    }
}

/// East-North-Up coordinates about `origin` on the tangent plane, using the
/// WGS84 meridional and prime-vertical radii at the origin latitude. The
/// origin defaults to the mean of the records.
pub fn convert_gps_to_local(
    records: &[(ViewId, Geodetic)],
    origin: Option<Geodetic>,
) -> Result<Vec<(ViewId, Vector3<f64>)>, IngestError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    for (v, g) in records {
        check_bounds(g).map_err(|m| IngestError::at(0, format!("view {v}: {m}")))?;
    }
    let origin = origin.unwrap_or_else(|| {
        let n = records.len() as f64;
        // circular mean keeps records straddling the antimeridian together
        let (s, c) = records.iter().fold((0.0, 0.0), |(s, c), (_, g)| {
            let (a, b) = g.lon.to_radians().sin_cos();
            (s + a, c + b)
        });
        Geodetic {
            lat: records.iter().map(|(_, g)| g.lat).sum::<f64>() / n,
            lon: s.atan2(c).to_degrees(),
            alt: records.iter().map(|(_, g)| g.alt).sum::<f64>() / n,
        }
    });
    let phi0 = origin.lat.to_radians();
    let s2 = phi0.sin().powi(2);
    let w = (1.0 - WGS84_E2 * s2).sqrt();
    let meridian = WGS84_A * (1.0 - WGS84_E2) / (w * w * w);
    let prime = WGS84_A / w;
    records
        .iter()
        .map(|(v, g)| {
            let dlat = g.lat - origin.lat;
            let dlon = wrap_degrees(g.lon - origin.lon);
            if dlat.abs() > MAX_OFFSET_DEG || dlon.abs() > MAX_OFFSET_DEG {
                return Err(IngestError::at(
                    0,
                    format!("view {v} lies {dlat:.3} deg / {dlon:.3} deg from the origin; the local frame is invalid"),
                ));
            }
            Ok((
                *v,
                Vector3::new(
                    dlon.to_radians() * prime * phi0.cos(),
                    dlat.to_radians() * meridian,
                    g.alt - origin.alt,
                ),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(lat: f64, lon: f64, alt: f64) -> Geodetic {
        Geodetic { lat, lon, alt }
    }

    #[test]
    fn origin_maps_to_zero() {
        let o = geo(40.5, -74.4, 20.0);
        let r = convert_gps_to_local(&[(0, o)], Some(o)).unwrap();
        assert_eq!(r[0].1, Vector3::zeros());
    }

    #[test]
    fn north_step_at_equator() {
        let r =
            convert_gps_to_local(&[(0, geo(1e-5, 0.0, 0.0))], Some(geo(0.0, 0.0, 0.0))).unwrap();
        assert!((r[0].1.y - 1.1057).abs() < 1e-3);
        assert!(r[0].1.x.abs() < 1e-12);
    }

    #[test]
    fn antipodal_records_fail() {
        let recs = [(0, geo(10.0, 20.0, 0.0)), (1, geo(-10.0, -160.0, 0.0))];
        assert!(convert_gps_to_local(&recs, None).is_err());
    }

    #[test]
    fn out_of_range_latitude() {
        let err = parse_ground_truth("CVDSFM-GT 1\nG 0 91 0 0\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn mixed_records() {
        let gt = parse_ground_truth("CVDSFM-GT 1\nG 0 40 -74 10\nGL 1 1 2 3\nG 2 40.001 -74 12\n")
            .unwrap();
        let p = gt.positions(None).unwrap();
        assert_eq!(p[&1], Vector3::new(1.0, 2.0, 3.0));
        assert!((p[&0].y + p[&2].y).abs() < 1e-9);
        assert!((p[&2].z - 1.0).abs() < 1e-12);
        assert_eq!(parse_ground_truth(&write_ground_truth(&gt)).unwrap(), gt);
    }

    #[test]
    fn local_isometry() {
        // two points ~700 m apart: tangent-plane distance vs. haversine on the local radius
        let a = geo(40.0, -74.0, 0.0);
        let b = geo(40.005, -73.994, 0.0);
        let r = convert_gps_to_local(&[(0, a), (1, b)], Some(a)).unwrap();
        let d = (r[1].1 - r[0].1).norm();
        let phi = 40f64.to_radians();
        let rad = (WGS84_A * (1.0 - WGS84_E2) / (1.0 - WGS84_E2 * phi.sin().powi(2)).powf(1.5)
            * WGS84_A
            / (1.0 - WGS84_E2 * phi.sin().powi(2)).sqrt())
        .sqrt();
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        let geodesic = 2.0 * rad * h.sqrt().asin();
        assert!(((d - geodesic) / geodesic).abs() < 1e-3);
    }
}
