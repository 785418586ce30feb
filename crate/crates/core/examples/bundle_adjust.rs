//! Bundle adjustment with horizontal priors on a perturbed synthetic scene.
//! Prints the cost breakdown before and after and the camera center errors.
//!
//! cargo run --release --example bundle_adjust -- [dump_path]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use priorsfm::ba::{
    problem_from_reconstruction, solve, write_problem, BaConfig, MatchCounts, PriorLift,
    ProblemScope,
};
use priorsfm::geometry::so3_exp;
use priorsfm::model::{build_tracks, Point3D, Reconstruction};
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = generate_scene(&SceneSpec {
        pixel_noise_sigma: 0.5,
        prior_noise: PriorNoise { xy: 0.5, yaw: 0.02 },
        n_points: 800,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut tracks = build_tracks(&scene.matches).tracks;
    for t in &mut tracks {
        let o = t.observations[0];
        let l = scene.keypoint_landmark[&(o.view_id, o.keypoint_id)];
        let jitter = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        t.point = Some(Point3D::new(scene.landmarks[l] + jitter));
    }
    let mut recon = Reconstruction::new(scene.views.clone(), tracks, scene.keypoints.clone());
    for (&v, pose) in &scene.poses {
        let mut p = *pose;
        p.rotation = so3_exp(&Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
        )) * p.rotation;
        p.translation += Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.2..0.2),
        );
        recon.register(v, p);
    }

    let priors: BTreeMap<_, _> = scene.priors.iter().map(|p| (p.view_id, *p)).collect();
    let scope = ProblemScope {
        variable_views: recon.registered.clone(),
        fixed_views: BTreeSet::new(),
        fixed_height_views: [0].into_iter().collect(),
        fixed_axis: None,
        refine_intrinsics: false,
    };
    let cfg = BaConfig::default();
    let (mut problem, _) = problem_from_reconstruction(
        &recon,
        &priors,
        &MatchCounts::from_reconstruction(&recon),
        &scope,
        &BTreeMap::new(),
        &PriorLift::default(),
        &cfg,
    );
    println!(
        "{} cameras, {} points, {} observations, {} translation / {} rotation / {} motion prior terms",
        problem.cameras.len(),
        problem.points.len(),
        problem.observations.len(),
        problem.translation_priors.len(),
        problem.rotation_priors.len(),
        problem.motion_priors.len()
    );
    if let Some(path) = std::env::args().nth(1) {
        write_problem(&problem, std::fs::File::create(&path).unwrap()).unwrap();
        println!("problem written to {path}");
    }

    let center_error = |problem: &priorsfm::ba::BaProblem| {
        problem
            .cameras
            .iter()
            .map(|c| (c.center - scene.poses[&c.view_id].center()).norm())
            .fold(0.0, f64::max)
    };
    let before = center_error(&problem);
    let report = solve(&mut problem, &cfg).unwrap();
    for (label, c) in [("initial", report.initial), ("final", report.final_cost)] {
        println!(
            "{label:>7}: reprojection {:.2}, translation prior {:.4}, rotation prior {:.4}, motion prior {:.4}",
            c.reprojection, c.translation_prior, c.rotation_prior, c.relative_motion
        );
    }
    println!(
        "{} iterations, converged {}, worst center error {:.3} m -> {:.3} m",
        report.iterations,
        report.converged,
        before,
        center_error(&problem)
    );
}
