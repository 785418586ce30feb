//! Essential-matrix RANSAC and pose recovery on one pair of a synthetic scene
//! with 30% outlier matches.
//!
//! cargo run --release --example two_view

use nalgebra::Vector3;
use priorsfm::geometry::so3_log;
use priorsfm::synthetic::{generate_scene, SceneSpec};
use priorsfm::twoview::{
    decompose_essential, estimate_essential_ransac, normalized_matches, TwoViewConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = generate_scene(&SceneSpec {
        pixel_noise_sigma: 1.0,
        outlier_fraction: 0.3,
        ..SceneSpec::default()
    })
    .unwrap();
    let pair = scene
        .matches
        .iter()
        .max_by_key(|p| p.matches.len())
        .unwrap();
    let views: std::collections::BTreeMap<_, _> =
        scene.views.iter().map(|v| (v.view_id, v)).collect();
    let (va, vb) = (views[&pair.view_a], views[&pair.view_b]);
    let (xi, xj, idx) = normalized_matches(pair, &scene.keypoints, &va.intrinsics, &vb.intrinsics);

    let cfg = TwoViewConfig::default();
    let est = estimate_essential_ransac(&xi, &xj, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let inl_i: Vec<Vector3<f64>> = est.inlier_indices.iter().map(|&k| xi[k]).collect();
    let inl_j: Vec<Vector3<f64>> = est.inlier_indices.iter().map(|&k| xj[k]).collect();
    let rel = decompose_essential(&est.e, &inl_i, &inl_j).unwrap();

    let (pa, pb) = (scene.poses[&pair.view_a], scene.poses[&pair.view_b]);
    let r_true = pb.r_cw() * pa.r_cw().transpose();
    let t_true = pb.t_cw() - r_true * pa.t_cw();
    let rot_err = so3_log(&(rel.rotation * r_true.transpose()))
        .norm()
        .to_degrees();
    let dir_err = rel
        .translation
        .normalize()
        .dot(&t_true.normalize())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();

    let labeled_outliers = est
        .inlier_indices
        .iter()
        .map(|&k| &pair.matches[idx[k]])
        .filter(|m| {
            scene
                .labels
                .matches
                .contains(&(pair.view_a, pair.view_b, m.kp_a, m.kp_b))
        })
        .count();
    println!(
        "pair ({}, {}): {} matches",
        pair.view_a,
        pair.view_b,
        pair.matches.len()
    );
    println!(
        "inliers {} (ratio {:.3}), {} of them labeled outliers, low parallax {}",
        est.inlier_indices.len(),
        est.inlier_ratio(pair.matches.len()),
        labeled_outliers,
        est.low_parallax
    );
    println!("rotation error {rot_err:.4} deg, translation direction error {dir_err:.4} deg");
}
