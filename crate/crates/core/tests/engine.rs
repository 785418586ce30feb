use std::collections::BTreeSet;

use priorsfm::engine::{run_incremental, EngineConfig, EngineError, EngineOutput};
use priorsfm::eval::{evaluate, EvalInput};
use priorsfm::ingest::write_poses;
use priorsfm::synthetic::{generate_scene, PriorNoise, SceneSpec, SyntheticScene};

fn noisy_scene(seed: u64) -> SyntheticScene {
    generate_scene(&SceneSpec {
        pixel_noise_sigma: 0.5,
        outlier_fraction: 0.1,
        prior_noise: PriorNoise { xy: 0.5, yaw: 0.02 },
        rng_seed: seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

fn run(
    scene: &SyntheticScene,
    with_priors: bool,
    cfg: &EngineConfig,
) -> Result<EngineOutput, EngineError> {
    let priors = if with_priors {
        scene.priors.clone()
    } else {
        Vec::new()
    };
    run_incremental(
        scene.views.clone(),
        scene.keypoints.clone(),
        &scene.matches,
        &priors,
        cfg,
    )
}

fn rmse(scene: &SyntheticScene, out: &EngineOutput) -> f64 {
    let recon = &out.reconstruction;
    evaluate(&EvalInput {
        estimated: recon
            .registered
            .iter()
            .map(|v| (*v, *recon.pose(*v).unwrap()))
            .collect(),
        ground_truth: scene.centers(),
        ..EvalInput::default()
    })
    .unwrap()
    .rmse_mean_m
}

#[test]
fn repeated_runs_write_identical_poses() {
    let scene = noisy_scene(1);
    let cfg = EngineConfig {
        seed: 17,
        ..EngineConfig::default()
    };
    let a = run(&scene, true, &cfg).unwrap();
    let b = run(&scene, true, &cfg).unwrap();
    assert_eq!(
        write_poses(&a.reconstruction),
        write_poses(&b.reconstruction)
    );
    assert_eq!(a.stats.registration_order, b.stats.registration_order);
}

#[test]
fn registered_views_are_valid_and_never_evicted() {
    let scene = noisy_scene(2);
    let out = run(&scene, true, &EngineConfig::default()).unwrap();
    let recon = &out.reconstruction;
    recon.validate().unwrap();
    for v in &recon.registered {
        assert!(recon.pose(*v).unwrap().is_valid(1e-9), "view {v}");
    }
    let order = &out.stats.registration_order;
    let unique: BTreeSet<_> = order.iter().copied().collect();
    assert_eq!(unique.len(), order.len(), "a view was registered twice");
    assert_eq!(
        unique, recon.registered,
        "registered set differs from the order log"
    );
    let (a, b) = out.stats.initial_pair.unwrap();
    assert_eq!(&order[..2], &[a, b]);
    assert!(out.georeferenced);
}

#[test]
fn stats_are_consistent() {
    let scene = noisy_scene(3);
    let out = run(&scene, true, &EngineConfig::default()).unwrap();
    let s = &out.stats;
    let cfg = EngineConfig::default();
    let eligible = scene
        .matches
        .iter()
        .filter(|p| p.matches.len() >= cfg.min_pair_inliers)
        .count();
    assert_eq!(s.pairs_tested, eligible);
    assert!(s.pairs_verified <= s.pairs_tested);
    assert!(s.tracks_admitted <= s.tracks_built);
    assert_eq!(s.tracks_admitted, out.reconstruction.n_points());
    assert!(s.global_ba_runs >= 1);
    for stage in [
        "verify_pairs",
        "tracks",
        "initialize",
        "register",
        "global_ba",
    ] {
        assert!(
            s.timings.iter().any(|(name, _)| name == stage),
            "missing stage {stage}"
        );
    }
}

#[test]
fn reconstruction_without_priors_is_accurate_up_to_similarity() {
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let out = run(&scene, false, &EngineConfig::default()).unwrap();
    assert!(!out.georeferenced);
    assert_eq!(out.reconstruction.registered.len(), scene.views.len());
    assert!(rmse(&scene, &out) < 1e-3);
}

#[test]
fn priors_put_the_model_in_the_prior_frame() {
    let scene = noisy_scene(4);
    let out = run(&scene, true, &EngineConfig::default()).unwrap();
    let recon = &out.reconstruction;
    // Without any similarity alignment, centers sit near their true ENU positions.
    let worst = recon
        .registered
        .iter()
        .map(|v| (recon.pose(*v).unwrap().center() - scene.poses[v].center()).norm())
        .fold(0.0, f64::max);
    assert!(worst < 2.0, "worst unaligned error {worst}");
    assert!(rmse(&scene, &out) < 0.1);
}

#[test]
fn too_few_matches_is_no_valid_pair() {
    let mut scene = generate_scene(&SceneSpec::default()).unwrap();
    for pair in scene.matches.pairs.values_mut() {
        pair.matches.truncate(6);
    }
    assert!(matches!(
        run(&scene, true, &EngineConfig::default()),
        Err(EngineError::NoValidPair)
    ));
}

#[test]
fn worker_count_does_not_change_the_result() {
    let scene = noisy_scene(5);
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let cfg = EngineConfig::default();
    let one = pool(1).install(|| run(&scene, true, &cfg)).unwrap();
    let many = pool(6).install(|| run(&scene, true, &cfg)).unwrap();
    assert_eq!(
        write_poses(&one.reconstruction),
        write_poses(&many.reconstruction)
    );
}
