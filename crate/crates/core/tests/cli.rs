use std::path::{Path, PathBuf};

use priorsfm::cli::{self, EXIT_INPUT, EXIT_OK, EXIT_RECONSTRUCTION};
use priorsfm::engine::{run_incremental, EngineConfig};
use priorsfm::eval::{evaluate, mean_reprojection_error, EvalInput};
use priorsfm::ingest::{
    parse_correspondences, parse_ground_truth, parse_poses, write_correspondences, write_report,
};
use priorsfm::synthetic::{generate_scene, SceneSpec};
use tempfile::TempDir;
use toml::Table;

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("priorsfm").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_default(dir: &Path) -> PathBuf {
    let out = dir.join("scene");
    assert_eq!(run(&["synth", "--out", p(&out)]), EXIT_OK);
    out
}

fn read_toml(path: &Path) -> Table {
    std::fs::read_to_string(path).unwrap().parse().unwrap()
}

#[test]
fn synth_writes_four_files_with_stable_bytes() {
    let dir = TempDir::new().unwrap();
    let a = synth_default(dir.path());
    let b = dir.path().join("again");
    assert_eq!(run(&["synth", "--out", p(&b)]), EXIT_OK);
    for name in [
        "correspondences.txt",
        "priors.txt",
        "ground_truth.txt",
        "labels.txt",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synth_rejects_invalid_fraction() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "outlier_fraction = 1.5\n").unwrap();
    assert_eq!(
        run(&[
            "synth",
            "--spec",
            p(&spec),
            "--out",
            p(&dir.path().join("o"))
        ]),
        EXIT_INPUT
    );
    std::fs::write(&spec, "no_such_key = 1\n").unwrap();
    assert_eq!(
        run(&[
            "synth",
            "--spec",
            p(&spec),
            "--out",
            p(&dir.path().join("o"))
        ]),
        EXIT_INPUT
    );
}

#[test]
fn reconstruct_then_evaluate_synthetic_scene() {
    let dir = TempDir::new().unwrap();
    let scene = synth_default(dir.path());
    let out = dir.path().join("run");
    let corr = scene.join("correspondences.txt");
    let code = run(&[
        "reconstruct",
        "--corr",
        p(&corr),
        "--priors",
        p(&scene.join("priors.txt")),
        "--out",
        p(&out),
        "--workers",
        "2",
    ]);
    assert_eq!(code, EXIT_OK);
    for name in [
        cli::POSES_FILE,
        cli::POINTS_FILE,
        cli::REPORT_FILE,
        cli::RUN_LOG_FILE,
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let poses = parse_poses(&std::fs::read_to_string(out.join(cli::POSES_FILE)).unwrap()).unwrap();
    assert_eq!(poses.len(), 20);

    let log = read_toml(&out.join(cli::RUN_LOG_FILE));
    let counts = log["counts"].as_table().unwrap();
    assert_eq!(counts["views_registered"].as_integer(), Some(20));
    assert!(counts["pairs_tested"].as_integer().unwrap() > 0);
    assert!(counts["tracks_admitted"].as_integer().unwrap() > 0);
    assert!(log["seconds"].as_table().unwrap().contains_key("total"));
    assert_eq!(log["config"]["workers"].as_integer(), Some(2));

    let metrics = dir.path().join("metrics.toml");
    let code = run(&[
        "evaluate",
        "--poses",
        p(&out.join(cli::POSES_FILE)),
        "--gt",
        p(&scene.join("ground_truth.txt")),
        "--out",
        p(&metrics),
        "--corr",
        p(&corr),
        "--run-report",
        p(&out.join(cli::REPORT_FILE)),
    ]);
    assert_eq!(code, EXIT_OK);

    // Recompute the same report through the library from the same files.
    let gt = parse_ground_truth(&std::fs::read_to_string(scene.join("ground_truth.txt")).unwrap())
        .unwrap()
        .positions(None)
        .unwrap();
    let parsed = parse_correspondences(&std::fs::read_to_string(&corr).unwrap(), 0.0).unwrap();
    let run_report = read_toml(&out.join(cli::REPORT_FILE));
    let reprojection = Some((
        run_report["reproj_mean_px2"].as_float().unwrap(),
        run_report["reproj_rms_px"].as_float().unwrap(),
    ));
    let report = evaluate(&EvalInput {
        estimated: poses.iter().map(|(v, r)| (*v, r.pose)).collect(),
        ground_truth: gt,
        classes: parsed
            .views
            .iter()
            .map(|v| (v.view_id, v.altitude))
            .collect(),
        reprojection,
        include_satellite_in_coverage: false,
    })
    .unwrap();
    assert_eq!(
        std::fs::read_to_string(&metrics).unwrap(),
        write_report(Some(&report), None)
    );
    assert_eq!(report.coverage_total, 1.0);
    assert!(report.rmse_mean_m < 1e-3);

    // The run report's reprojection figures equal a library run with the same settings.
    let recon_lib = run_incremental(
        parsed.views,
        parsed.keypoints,
        &parsed.matches,
        &priorsfm::ingest::parse_priors(
            &std::fs::read_to_string(scene.join("priors.txt")).unwrap(),
            None,
        )
        .unwrap()
        .0,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_eq!(
        mean_reprojection_error(&recon_lib.reconstruction).ok(),
        reprojection
    );
}

#[test]
fn corrupted_header_names_line_one() {
    let dir = TempDir::new().unwrap();
    let corr = dir.path().join("c.txt");
    std::fs::write(&corr, "CVDSFM-CORR 99\nV 0 a 10 10 ground\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        run(&["reconstruct", "--corr", p(&corr), "--out", p(&out)]),
        EXIT_INPUT
    );
    let err = parse_correspondences(&std::fs::read_to_string(&corr).unwrap(), 0.0).unwrap_err();
    assert_eq!(err.line(), Some(1));
    assert!(err.to_string().contains("line 1"));
}

#[test]
fn missing_input_is_input_error() {
    let dir = TempDir::new().unwrap();
    let code = run(&[
        "reconstruct",
        "--corr",
        p(&dir.path().join("absent.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code, EXIT_INPUT);
    assert_eq!(run(&["reconstruct", "--out", p(dir.path())]), EXIT_INPUT);
}

#[test]
fn disconnected_matches_exit_two() {
    let dir = TempDir::new().unwrap();
    let mut scene = generate_scene(&SceneSpec::default()).unwrap();
    for pair in scene.matches.pairs.values_mut() {
        pair.matches.truncate(4);
    }
    let corr = dir.path().join("c.txt");
    std::fs::write(
        &corr,
        write_correspondences(&scene.views, &scene.keypoints, &scene.matches),
    )
    .unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        run(&["reconstruct", "--corr", p(&corr), "--out", p(&out)]),
        EXIT_RECONSTRUCTION
    );
    let log = read_toml(&out.join(cli::RUN_LOG_FILE));
    assert_eq!(log["counts"]["views_registered"].as_integer(), Some(0));
}

#[test]
fn flags_match_config_file_and_win_on_conflict() {
    let dir = TempDir::new().unwrap();
    let scene = synth_default(dir.path());
    let corr = scene.join("correspondences.txt");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "workers = 3\n[engine]\nseed = 5\n[engine.nbv]\nlambda = 0.25\n",
    )
    .unwrap();

    let from_file = dir.path().join("file");
    assert_eq!(
        run(&[
            "reconstruct",
            "--corr",
            p(&corr),
            "--config",
            p(&config),
            "--out",
            p(&from_file)
        ]),
        EXIT_OK
    );
    let from_flags = dir.path().join("flags");
    let code = run(&[
        "reconstruct",
        "--corr",
        p(&corr),
        "--out",
        p(&from_flags),
        "--workers",
        "3",
        "--seed",
        "5",
        "--set",
        "engine.nbv.lambda=0.25",
    ]);
    assert_eq!(code, EXIT_OK);
    let file_log = read_toml(&from_file.join(cli::RUN_LOG_FILE));
    let flag_log = read_toml(&from_flags.join(cli::RUN_LOG_FILE));
    assert_eq!(file_log["config"], flag_log["config"]);
    assert_eq!(
        std::fs::read(from_file.join(cli::POSES_FILE)).unwrap(),
        std::fs::read(from_flags.join(cli::POSES_FILE)).unwrap()
    );

    let both = dir.path().join("both");
    let code = run(&[
        "reconstruct",
        "--corr",
        p(&corr),
        "--config",
        p(&config),
        "--out",
        p(&both),
        "--seed",
        "9",
    ]);
    assert_eq!(code, EXIT_OK);
    let log = read_toml(&both.join(cli::RUN_LOG_FILE));
    assert_eq!(log["config"]["engine"]["seed"].as_integer(), Some(9));
    assert_eq!(
        log["config"]["engine"]["nbv"]["lambda"].as_float(),
        Some(0.25)
    );
}

#[test]
fn bad_config_is_input_error() {
    let dir = TempDir::new().unwrap();
    let scene = synth_default(dir.path());
    let corr = scene.join("correspondences.txt");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[engine]\nunknown_knob = 1\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        run(&[
            "reconstruct",
            "--corr",
            p(&corr),
            "--config",
            p(&config),
            "--out",
            p(&out)
        ]),
        EXIT_INPUT
    );
    assert_eq!(
        run(&[
            "reconstruct",
            "--corr",
            p(&corr),
            "--out",
            p(&out),
            "--set",
            "engine.nbv.lambda=-2"
        ]),
        EXIT_INPUT
    );
}

fn write_poses_and_gt(dir: &Path, n_gt: usize) -> (PathBuf, PathBuf) {
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let mut recon = priorsfm::model::Reconstruction::new(
        scene.views.clone(),
        Vec::new(),
        scene.keypoints.clone(),
    );
    for (v, pose) in &scene.poses {
        recon.register(*v, *pose);
    }
    let poses = dir.join("poses.txt");
    std::fs::write(&poses, priorsfm::ingest::write_poses(&recon)).unwrap();
    let mut files = scene.files();
    let keep: Vec<&str> = files.ground_truth.lines().take(1 + n_gt).collect();
    files.ground_truth = keep.join("\n") + "\n";
    let gt = dir.join("gt.txt");
    std::fs::write(&gt, &files.ground_truth).unwrap();
    (poses, gt)
}

#[test]
fn evaluate_ground_truth_poses_scores_zero() {
    let dir = TempDir::new().unwrap();
    let (poses, gt) = write_poses_and_gt(dir.path(), 20);
    let out = dir.path().join("m.toml");
    assert_eq!(
        run(&[
            "evaluate",
            "--poses",
            p(&poses),
            "--gt",
            p(&gt),
            "--out",
            p(&out)
        ]),
        EXIT_OK
    );
    let m = read_toml(&out);
    assert!(m["rmse_mean_m"].as_float().unwrap() < 1e-9);
    assert_eq!(m["coverage_total"].as_float(), Some(1.0));
}

#[test]
fn evaluate_with_half_ground_truth() {
    let dir = TempDir::new().unwrap();
    let (poses, gt) = write_poses_and_gt(dir.path(), 10);
    let out = dir.path().join("m.toml");
    assert_eq!(
        run(&[
            "evaluate",
            "--poses",
            p(&poses),
            "--gt",
            p(&gt),
            "--out",
            p(&out)
        ]),
        EXIT_OK
    );
    let m = read_toml(&out);
    assert_eq!(m["coverage_total"].as_float(), Some(1.0));
    assert_eq!(m["n_estimated"].as_integer(), Some(20));
}

#[test]
fn evaluate_needs_common_views() {
    let dir = TempDir::new().unwrap();
    let (poses, gt) = write_poses_and_gt(dir.path(), 2);
    let out = dir.path().join("m.toml");
    assert_eq!(
        run(&[
            "evaluate",
            "--poses",
            p(&poses),
            "--gt",
            p(&gt),
            "--out",
            p(&out)
        ]),
        EXIT_INPUT
    );
    assert!(!out.exists());
}
