//! Generates a synthetic two-altitude scene and writes its input files.
//!
//! cargo run --release --example synth_scene -- [out_dir]

use std::path::PathBuf;

use priorsfm::model::AltitudeClass;
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec};

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synthetic_scene".into())
        .into();
    let spec = SceneSpec {
        pixel_noise_sigma: 1.0,
        outlier_fraction: 0.3,
        prior_noise: PriorNoise { xy: 1.0, yaw: 0.05 },
        prior_outlier_fraction: 0.1,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).unwrap();
    scene.files().write_to(&out).unwrap();

    let ground = scene
        .views
        .iter()
        .filter(|v| v.altitude == AltitudeClass::Ground)
        .count();
    let cross: usize = scene
        .matches
        .iter()
        .filter(|p| scene.altitude(p.view_a) != scene.altitude(p.view_b))
        .map(|p| p.matches.len())
        .sum();
    println!(
        "{} ground and {} aerial views, {} landmarks",
        ground,
        scene.views.len() - ground,
        scene.landmarks.len()
    );
    println!(
        "{} matches in {} pairs, {} across altitude bands, {} labeled outliers",
        scene.matches.total_matches(),
        scene.matches.len(),
        cross,
        scene.labels.matches.len()
    );
    println!(
        "{} priors, {} displaced",
        scene.priors.len(),
        scene.labels.priors.len()
    );
    for w in &scene.warnings {
        println!("warning: {w}");
    }
    println!("written to {}", out.display());
}
