//! Incremental reconstruction of a synthetic two-altitude scene, with and
//! without priors, scored against ground truth.
//!
//! cargo run --release --example incremental -- [pixel_sigma] [outlier_fraction]

use std::time::Instant;

use priorsfm::engine::{run_incremental, EngineConfig};
use priorsfm::eval::{evaluate, mean_reprojection_error, EvalInput};
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec};

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let sigma = args.first().copied().unwrap_or(0.0);
    let outliers = args.get(1).copied().unwrap_or(0.0);
    let spec = SceneSpec {
        pixel_noise_sigma: sigma,
        outlier_fraction: outliers,
        prior_noise: if sigma > 0.0 {
            PriorNoise { xy: 1.0, yaw: 0.05 }
        } else {
            PriorNoise::default()
        },
        prior_outlier_fraction: if sigma > 0.0 { 0.1 } else { 0.0 },
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).expect("valid spec");
    println!(
        "scene: {} views, {} landmarks, {} matches ({} labeled outliers)",
        scene.views.len(),
        scene.landmarks.len(),
        scene.matches.total_matches(),
        scene.labels.matches.len()
    );

    for (label, priors) in [
        ("with priors", scene.priors.clone()),
        ("without priors", Vec::new()),
    ] {
        let t = Instant::now();
        let out = match run_incremental(
            scene.views.clone(),
            scene.keypoints.clone(),
            &scene.matches,
            &priors,
            &EngineConfig::default(),
        ) {
            Ok(o) => o,
            Err(e) => {
                println!("{label}: {e}");
                continue;
            }
        };
        let secs = t.elapsed().as_secs_f64();
        let recon = &out.reconstruction;
        let estimated = recon
            .registered
            .iter()
            .map(|v| (*v, *recon.pose(*v).unwrap()))
            .collect();
        let report = evaluate(&EvalInput {
            estimated,
            ground_truth: scene.centers(),
            classes: scene
                .views
                .iter()
                .map(|v| (v.view_id, v.altitude))
                .collect(),
            reprojection: mean_reprojection_error(recon).ok(),
            include_satellite_in_coverage: false,
        })
        .expect("at least three registered views");
        println!(
            "{label}: {:.2}s coverage {:.3} rmse mean {:.6} m max {:.6} m, reprojection rms {:.4} px, {} points, order {:?}",
            secs,
            report.coverage_total,
            report.rmse_mean_m,
            report.rmse_max_m,
            report.reproj_rms_px.unwrap_or(f64::NAN),
            recon.n_points(),
            out.stats.registration_order,
        );
    }
}
