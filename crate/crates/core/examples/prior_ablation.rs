//! Reconstruction of a scene whose altitude bands share only a short seam of
//! matches, with and without priors.
//!
//! cargo run --release --example prior_ablation -- [seeds...]

use priorsfm::engine::{run_incremental, EngineConfig};
use priorsfm::eval::{evaluate, EvalInput};
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec};

fn main() {
    let mut seeds: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if seeds.is_empty() {
        seeds = vec![0, 1, 2];
    }
    let mut cfg = EngineConfig {
        min_pair_inliers: 8,
        ..EngineConfig::default()
    };
    cfg.pnp.min_inliers = 6;
    for seed in seeds {
        let scene = generate_scene(&SceneSpec {
            pixel_noise_sigma: 0.5,
            prior_noise: PriorNoise { xy: 0.5, yaw: 0.02 },
            seam_landmarks: Some(10),
            rng_seed: seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let cross: Vec<_> = scene
            .matches
            .iter()
            .filter(|p| scene.altitude(p.view_a) != scene.altitude(p.view_b))
            .map(|p| (p.view_a, p.view_b, p.matches.len()))
            .collect();
        print!("seed {seed}, cross-band pairs {cross:?}:");
        for (label, priors) in [("priors", scene.priors.clone()), ("no priors", Vec::new())] {
            match run_incremental(
                scene.views.clone(),
                scene.keypoints.clone(),
                &scene.matches,
                &priors,
                &cfg,
            ) {
                Err(e) => print!("  {label}: {e}"),
                Ok(out) => {
                    let recon = &out.reconstruction;
                    let r = evaluate(&EvalInput {
                        estimated: recon
                            .registered
                            .iter()
                            .map(|v| (*v, *recon.pose(*v).unwrap()))
                            .collect(),
                        ground_truth: scene.centers(),
                        classes: scene
                            .views
                            .iter()
                            .map(|v| (v.view_id, v.altitude))
                            .collect(),
                        ..EvalInput::default()
                    })
                    .unwrap();
                    print!(
                        "  {label}: coverage {:.2} rmse {:.3} m",
                        r.coverage_total, r.rmse_mean_m
                    );
                }
            }
        }
        println!();
    }
}
