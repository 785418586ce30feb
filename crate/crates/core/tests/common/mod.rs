#![allow(dead_code)]

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use priorsfm::ba::{BaCamera, BaPoint, BaProblem, IntrinsicsGroup, ReprojectionTerm};
use priorsfm::model::{CameraIntrinsics, PoseSE3};

/// Pose at `center` with the body x axis pointing at `target`.
pub fn looking_at(center: Vector3<f64>, target: Vector3<f64>) -> PoseSE3 {
    let fwd = (target - center).normalize();
    let left = Vector3::z().cross(&fwd).normalize();
    let up = fwd.cross(&left);
    PoseSE3::new(Matrix3::from_columns(&[fwd, left, up]), center)
}

pub fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(0.0..half / 2.0),
    )
}

/// Cameras on a ring looking at the origin and points near it. Pixels carry
/// uniform offsets of up to `pixel_jitter`.
pub fn ring_problem(
    rng: &mut ChaCha8Rng,
    n_cameras: usize,
    n_points: usize,
    pixel_jitter: f64,
) -> BaProblem {
    let k = CameraIntrinsics::centered(rng.random_range(600.0..1500.0), 1280, 960);
    let cameras: Vec<BaCamera> = (0..n_cameras)
        .map(|c| {
            let a =
                std::f64::consts::TAU * c as f64 / n_cameras as f64 + rng.random_range(-0.2..0.2);
            let center = Vector3::new(30.0 * a.cos(), 30.0 * a.sin(), rng.random_range(1.0..15.0));
            let pose = looking_at(center, Vector3::new(0.0, 0.0, 2.0));
            BaCamera {
                view_id: c as u32,
                rotation: pose.rotation,
                center: pose.translation,
                group: 0,
                fixed_rotation: false,
                fixed_center: [false; 3],
            }
        })
        .collect();
    let points: Vec<BaPoint> = (0..n_points)
        .map(|i| BaPoint {
            track_id: i,
            position: random_point(rng, 6.0),
            fixed: false,
        })
        .collect();
    let mut observations = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        for (pi, pt) in points.iter().enumerate() {
            if let Some(uv) = k.project(&cam.pose().world_to_optical(&pt.position)) {
                let jitter = Vector2::new(
                    rng.random_range(-pixel_jitter..=pixel_jitter),
                    rng.random_range(-pixel_jitter..=pixel_jitter),
                );
                observations.push(ReprojectionTerm {
                    camera: ci,
                    point: pi,
                    pixel: uv + jitter,
                });
            }
        }
    }
    BaProblem {
        cameras,
        groups: vec![IntrinsicsGroup {
            intrinsics: k,
            refine_focal: false,
            focal_min: 0.3 * k.focal,
            focal_max: 3.0 * k.focal,
        }],
        points,
        observations,
        huber_px: 16.0,
        ..BaProblem::default()
    }
}
