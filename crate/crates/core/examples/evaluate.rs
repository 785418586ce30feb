//! Evaluation metrics: coverage arithmetic, similarity alignment and
//! per-class error on a known trajectory.
//!
//! cargo run --release --example evaluate

use std::collections::BTreeMap;

use nalgebra::Vector3;
use priorsfm::eval::{coverage, evaluate, EvalInput, SimilarityTransform};
use priorsfm::geometry::so3_exp;
use priorsfm::synthetic::{generate_scene, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    println!(
        "coverage 178 of 179 = {:.4}, 364 of 365 = {:.4}",
        coverage(178, 179),
        coverage(364, 365)
    );

    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // An arbitrary similarity frame plus 5 cm of noise, with one view missing.
    let frame = SimilarityTransform {
        scale: 0.37,
        rotation: so3_exp(&Vector3::new(0.3, -1.1, 2.0)),
        translation: Vector3::new(12.0, -40.0, 3.0),
    };
    let estimated: BTreeMap<_, _> = scene
        .poses
        .iter()
        .filter(|(v, _)| **v != 7)
        .map(|(v, p)| {
            let mut p = frame.apply_pose(p);
            p.translation += 0.37
                * 0.05
                * Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
            (*v, p)
        })
        .collect();
    let report = evaluate(&EvalInput {
        estimated,
        ground_truth: scene.centers(),
        classes: scene
            .views
            .iter()
            .map(|v| (v.view_id, v.altitude))
            .collect(),
        reprojection: None,
        include_satellite_in_coverage: false,
    })
    .unwrap();
    println!(
        "recovered scale {:.4} (true {:.4}), rmse min / mean / max {:.4} / {:.4} / {:.4} m",
        report.alignment.scale,
        1.0 / frame.scale,
        report.rmse_min_m,
        report.rmse_mean_m,
        report.rmse_max_m
    );
    println!(
        "coverage total {:.4}, ground {:.4}, aerial {:.4}",
        report.coverage_total, report.coverage_ground, report.coverage_aerial
    );
    for (class, m) in &report.per_class {
        println!(
            "  {:<6} {} of {} views, rmse {:.4} m",
            class.as_str(),
            m.n_estimated,
            m.n_input,
            m.rmse_mean_m
        );
    }
}
