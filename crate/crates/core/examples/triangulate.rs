//! Multi-view triangulation of one synthetic landmark: linear estimate, robust
//! refinement, and the admission test.
//!
//! cargo run --release --example triangulate -- [pixel_sigma]

use priorsfm::synthetic::{generate_scene, SceneSpec};
use priorsfm::triangulate::{
    admit_track, triangulate_dlt, triangulate_multiview, PointObservation, TriangulationConfig,
};

fn main() {
    let sigma: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1.0);
    let scene = generate_scene(&SceneSpec {
        pixel_noise_sigma: sigma,
        ..SceneSpec::default()
    })
    .unwrap();
    let views: std::collections::BTreeMap<_, _> =
        scene.views.iter().map(|v| (v.view_id, v)).collect();

    // The landmark seen by the most views.
    let mut seen: Vec<Vec<(u32, u32)>> = vec![Vec::new(); scene.landmarks.len()];
    for (&(v, kp), &l) in &scene.keypoint_landmark {
        seen[l].push((v, kp));
    }
    let (landmark, obs_ids) = seen
        .iter()
        .enumerate()
        .max_by_key(|(_, o)| o.len())
        .unwrap();
    let obs: Vec<PointObservation> = obs_ids
        .iter()
        .map(|&(v, kp)| {
            PointObservation::from_pose(
                &scene.poses[&v],
                &views[&v].intrinsics,
                scene.keypoints.get(v, kp).unwrap(),
            )
        })
        .collect();

    let truth = scene.landmarks[landmark];
    let cfg = TriangulationConfig::default();
    let (linear, ratio) = triangulate_dlt(&obs).unwrap();
    let refined = triangulate_multiview(&obs, &cfg).unwrap();
    println!("landmark {landmark} seen in {} views", obs.len());
    println!(
        "linear   error {:.6} m (singular value ratio {ratio:.2e})",
        (linear - truth).norm()
    );
    println!(
        "refined  error {:.6} m, cost {:.4} -> {:.4} in {} iterations",
        (refined.point.position - truth).norm(),
        refined.initial_cost,
        refined.final_cost,
        refined.iterations
    );
    println!(
        "mean reprojection {:.3} px, ray angle {:.2} deg, admitted {}",
        refined.mean_reprojection_error,
        refined.triangulation_angle.to_degrees(),
        admit_track(&refined, &cfg)
    );
}
