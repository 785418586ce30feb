//! Registers a camera against a handful of known landmarks with P3P RANSAC
//! and refinement, with and without a horizontal position prior.
//!
//! cargo run --release --example pnp_register

use nalgebra::Vector2;
use priorsfm::engine::{pose_uncertainty, register_view_pnp, PnpConfig, PosePrior};
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = generate_scene(&SceneSpec {
        pixel_noise_sigma: 3.0,
        prior_noise: PriorNoise { xy: 1.0, yaw: 0.05 },
        ..SceneSpec::default()
    })
    .unwrap();
    let view = scene.views.iter().find(|v| v.view_id == 12).unwrap();
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (&(v, kp), &l) in &scene.keypoint_landmark {
        if v == view.view_id {
            points.push(scene.landmarks[l]);
            pixels.push(scene.keypoints.get(v, kp).unwrap());
        }
    }
    points.truncate(16);
    pixels.truncate(16);
    // Every eighth correspondence points at the wrong landmark.
    for k in (0..points.len()).step_by(8) {
        points[k] = scene.landmarks[(k * 7919) % scene.landmarks.len()];
    }
    let truth = scene.poses[&view.view_id];
    let p = scene
        .priors
        .iter()
        .find(|p| p.view_id == view.view_id)
        .unwrap();
    let prior = PosePrior {
        target: Vector2::new(p.x, p.y),
        weight: 1.0,
        initial_pose: None,
        neighbors: Vec::new(),
    };
    for (label, prior) in [("no prior", None), ("with prior", Some(&prior))] {
        let res = register_view_pnp(
            &view.intrinsics,
            &points,
            &pixels,
            prior,
            &PnpConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        println!(
            "{label}: {} of {} inliers, rms {:.3} px, center error {:.4} m, uncertainty {:.3e}",
            res.inlier_count,
            points.len(),
            res.rms_px,
            (res.pose.center() - truth.center()).norm(),
            pose_uncertainty(&res.covariance)
        );
    }
}
