//! Command-line entry points: `reconstruct`, `evaluate` and `synth`.
//!
//! Exit codes: 0 success, 1 input error, 2 reconstruction failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use toml::{Table, Value};

use crate::config::RunConfig;
use crate::engine::{run_incremental, EngineError, EngineOutput};
use crate::eval::{coverage, evaluate, mean_reprojection_error, EvalInput, MetricsReport};
use crate::ingest::{
    parse_correspondences, parse_ground_truth, parse_poses, parse_priors, read_file, write_ply,
    write_poses, write_report, RunSummary,
};
use crate::model::{AltitudeClass, ViewId};
use crate::synthetic::{generate_scene, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_RECONSTRUCTION: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "priorsfm",
    version,
    about = "Incremental structure-from-motion with horizontal pose priors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct cameras and points from a correspondence file.
    Reconstruct(ReconstructArgs),
    /// Score a poses file against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub corr: PathBuf,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Same as `--set engine.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Same as `--set workers=N`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Same as `--set score_floor=F`.
    #[arg(long)]
    pub score_floor: Option<f64>,
    /// Dotted config override, e.g. `engine.nbv.lambda=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Correspondence file listing every input view and its class; without
    /// it the input set is the union of posed and ground-truth views.
    #[arg(long)]
    pub corr: Option<PathBuf>,
    /// `report.toml` of the reconstruction, for its reprojection error.
    #[arg(long)]
    pub run_report: Option<PathBuf>,
    #[arg(long)]
    pub include_satellite: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Output file names of `reconstruct`.
pub const POSES_FILE: &str = "poses.txt";
pub const POINTS_FILE: &str = "points.ply";
pub const REPORT_FILE: &str = "report.toml";
pub const RUN_LOG_FILE: &str = "run_log.toml";

/// Parses arguments and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn fail(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_INPUT
}

fn write_out(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn effective_config(a: &ReconstructArgs) -> Result<RunConfig, String> {
    let base = match &a.config {
        Some(p) => RunConfig::from_toml(&read_file(p).map_err(|e| e.to_string())?)
            .map_err(|e| format!("{}: {e}", p.display()))?,
        None => RunConfig::default(),
    };
    let mut sets = Vec::new();
    if let Some(s) = a.seed {
        sets.push(format!("engine.seed={s}"));
    }
    if let Some(w) = a.workers {
        sets.push(format!("workers={w}"));
    }
    if let Some(f) = a.score_floor {
        sets.push(format!("score_floor={f:?}"));
    }
    sets.extend(a.overrides.iter().cloned());
    base.with_overrides(&sets).map_err(|e| e.to_string())
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> i32 {
    let started = Instant::now();
    let cfg = match effective_config(a) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let corr_text = match read_file(&a.corr) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let corr = match parse_correspondences(&corr_text, cfg.score_floor) {
        Ok(c) => c,
        Err(e) => return fail(format!("{}: {e}", a.corr.display())),
    };
    for w in &corr.warnings {
        warn!("{}: {w}", a.corr.display());
    }
    let known: BTreeSet<ViewId> = corr.views.iter().map(|v| v.view_id).collect();
    let priors = match &a.priors {
        None => Vec::new(),
        Some(p) => {
            let parsed = read_file(p).and_then(|t| parse_priors(&t, Some(&known)));
            match parsed {
                Ok((priors, warnings)) => {
                    for w in warnings {
                        warn!("{}: {w}", p.display());
                    }
                    priors
                }
                Err(e) => return fail(format!("{}: {e}", p.display())),
            }
        }
    };
    let ingest_secs = started.elapsed().as_secs_f64();
    info!(
        "{} views, {} matches ({} below the score floor), {} priors",
        corr.views.len(),
        corr.matches.total_matches(),
        corr.filtered_matches,
        priors.len()
    );
    if let Err(e) = std::fs::create_dir_all(&a.out) {
        return fail(format!("{}: {e}", a.out.display()));
    }

    let classes: BTreeMap<ViewId, AltitudeClass> =
        corr.views.iter().map(|v| (v.view_id, v.altitude)).collect();
    let n_input = corr.views.len();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => return fail(format!("thread pool: {e}")),
    };
    let result = pool.install(|| {
        run_incremental(
            corr.views,
            corr.keypoints,
            &corr.matches,
            &priors,
            &cfg.engine,
        )
    });
    let out = match result {
        Ok(o) => o,
        Err(EngineError::NoValidPair) => {
            let summary = RunSummary {
                n_input,
                timings: vec![("ingest".into(), ingest_secs)],
                ..RunSummary::default()
            };
            let log = run_log(&cfg, &summary, None);
            if let Err(e) = write_out(&a.out.join(RUN_LOG_FILE), &log) {
                eprintln!("error: {e}");
            }
            eprintln!("error: {}", EngineError::NoValidPair);
            return EXIT_RECONSTRUCTION;
        }
    };
    let summary = summarize(
        &out,
        &classes,
        n_input,
        cfg.include_satellite_in_coverage,
        ingest_secs,
        started,
    );
    let recon = &out.reconstruction;
    let files = [
        (POSES_FILE, write_poses(recon)),
        (POINTS_FILE, write_ply(recon)),
        (REPORT_FILE, write_report(None, Some(&summary))),
        (RUN_LOG_FILE, run_log(&cfg, &summary, Some(&out))),
    ];
    for (name, text) in files {
        if let Err(e) = write_out(&a.out.join(name), &text) {
            return fail(e);
        }
    }
    println!(
        "registered {} of {} views, {} points, coverage {:.4}",
        summary.n_registered, n_input, summary.n_points, summary.coverage_total
    );
    if recon.registered.is_empty() {
        EXIT_RECONSTRUCTION
    } else {
        EXIT_OK
    }
}

fn summarize(
    out: &EngineOutput,
    classes: &BTreeMap<ViewId, AltitudeClass>,
    n_input: usize,
    include_satellite: bool,
    ingest_secs: f64,
    started: Instant,
) -> RunSummary {
    let recon = &out.reconstruction;
    let count = |c: Option<AltitudeClass>, registered: bool| {
        classes
            .iter()
            .filter(|(v, k)| {
                c.is_none_or(|c| c == **k) && (!registered || recon.registered.contains(v))
            })
            .filter(|(_, k)| c.is_some() || include_satellite || **k != AltitudeClass::Satellite)
            .count()
    };
    let cov = |c: Option<AltitudeClass>| coverage(count(c, true), count(c, false));
    let reproj = mean_reprojection_error(recon).ok();
    let mut timings = vec![("ingest".to_string(), ingest_secs)];
    timings.extend(out.stats.timings.iter().cloned());
    timings.push(("total".to_string(), started.elapsed().as_secs_f64()));
    RunSummary {
        n_input,
        n_registered: recon.registered.len(),
        n_points: recon.n_points(),
        n_observations: recon
            .tracks
            .iter()
            .filter(|t| t.point.is_some())
            .map(|t| recon.active_observations(t).len())
            .sum(),
        pairs_tested: out.stats.pairs_tested,
        pairs_verified: out.stats.pairs_verified,
        tracks_admitted: out.stats.tracks_admitted,
        coverage_aerial: cov(Some(AltitudeClass::Aerial)),
        coverage_ground: cov(Some(AltitudeClass::Ground)),
        coverage_total: cov(None),
        reproj_mean_px2: reproj.map(|r| r.0),
        reproj_rms_px: reproj.map(|r| r.1),
        timings,
    }
}

/// Effective configuration, per-stage counts and timings as TOML.
fn run_log(cfg: &RunConfig, s: &RunSummary, out: Option<&EngineOutput>) -> String {
    let mut doc = Table::new();
    let config: Table = toml::from_str(&cfg.to_toml()).expect("config round-trips");
    doc.insert("config".into(), Value::Table(config));
    let mut counts = Table::new();
    let int = |v: usize| Value::Integer(v as i64);
    counts.insert("views_input".into(), int(s.n_input));
    counts.insert("pairs_tested".into(), int(s.pairs_tested));
    counts.insert("pairs_verified".into(), int(s.pairs_verified));
    counts.insert("views_registered".into(), int(s.n_registered));
    counts.insert("tracks_admitted".into(), int(s.tracks_admitted));
    counts.insert("points".into(), int(s.n_points));
    if let Some(o) = out {
        counts.insert("tracks_built".into(), int(o.stats.tracks_built));
        counts.insert("dropped_components".into(), int(o.stats.dropped_components));
        counts.insert(
            "rejected_observations".into(),
            int(o.stats.rejected_observations),
        );
        counts.insert("local_ba_runs".into(), int(o.stats.local_ba_runs));
        counts.insert("global_ba_runs".into(), int(o.stats.global_ba_runs));
        counts.insert("georeferenced".into(), Value::Boolean(o.georeferenced));
        let order: Vec<Value> = o
            .stats
            .registration_order
            .iter()
            .map(|v| Value::Integer(*v as i64))
            .collect();
        counts.insert("registration_order".into(), Value::Array(order));
    }
    doc.insert("counts".into(), Value::Table(counts));
    let mut secs = Table::new();
    for (stage, t) in &s.timings {
        secs.insert(stage.clone(), Value::Float(*t));
    }
    doc.insert("seconds".into(), Value::Table(secs));
    toml::to_string(&doc).expect("run log serializes")
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> i32 {
    let poses = match read_file(&a.poses).and_then(|t| parse_poses(&t)) {
        Ok(p) => p,
        Err(e) => return fail(format!("{}: {e}", a.poses.display())),
    };
    let gt = match read_file(&a.gt)
        .and_then(|t| parse_ground_truth(&t))
        .and_then(|g| g.positions(None))
    {
        Ok(g) => g,
        Err(e) => return fail(format!("{}: {e}", a.gt.display())),
    };
    let classes: BTreeMap<ViewId, AltitudeClass> = match &a.corr {
        Some(p) => match read_file(p).and_then(|t| parse_correspondences(&t, 0.0)) {
            Ok(c) => c.views.iter().map(|v| (v.view_id, v.altitude)).collect(),
            Err(e) => return fail(format!("{}: {e}", p.display())),
        },
        None => poses
            .keys()
            .chain(gt.keys())
            .map(|v| (*v, AltitudeClass::Ground))
            .collect(),
    };
    let reprojection = match &a.run_report {
        None => None,
        Some(p) => match read_file(p).map(|t| t.parse::<Table>()) {
            Ok(Ok(t)) => match (
                t.get("reproj_mean_px2").and_then(Value::as_float),
                t.get("reproj_rms_px").and_then(Value::as_float),
            ) {
                (Some(m), Some(r)) => Some((m, r)),
                _ => None,
            },
            Ok(Err(e)) => return fail(format!("{}: {e}", p.display())),
            Err(e) => return fail(e),
        },
    };
    let common = poses.keys().filter(|v| gt.contains_key(v)).count();
    if common < 3 {
        return fail(format!(
            "need at least 3 views with both a pose and ground truth, found {common}"
        ));
    }
    let input = EvalInput {
        estimated: poses.iter().map(|(v, r)| (*v, r.pose)).collect(),
        ground_truth: gt,
        classes,
        reprojection,
        include_satellite_in_coverage: a.include_satellite,
    };
    let report = match evaluate(&input) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_out(&a.out, &write_report(Some(&report), None)) {
        return fail(e);
    }
    print!("{}", metrics_summary(&report));
    EXIT_OK
}

/// The lines `evaluate` prints.
pub fn metrics_summary(r: &MetricsReport) -> String {
    let mut s = String::new();
    writeln!(s, "rmse_mean_m = {}", r.rmse_mean_m).unwrap();
    writeln!(s, "coverage_total = {}", r.coverage_total).unwrap();
    match (r.reproj_mean_px2, r.reproj_rms_px) {
        (Some(m), Some(rms)) => {
            writeln!(s, "reproj_mean_px2 = {m}").unwrap();
            writeln!(s, "reproj_rms_px = {rms}").unwrap();
        }
        _ => writeln!(s, "reproj = unavailable").unwrap(),
    }
    s
}

pub fn cmd_synth(a: &SynthArgs) -> i32 {
    let spec = match &a.spec {
        None => SceneSpec::default(),
        Some(p) => match read_file(p).map(|t| toml::from_str::<SceneSpec>(&t)) {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => return fail(format!("{}: {e}", p.display())),
            Err(e) => return fail(e),
        },
    };
    let scene = match generate_scene(&spec) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    for w in &scene.warnings {
        warn!("{w}");
    }
    if let Err(e) = scene.files().write_to(&a.out) {
        return fail(e);
    }
    println!(
        "{} views, {} landmarks, {} matches written to {}",
        scene.views.len(),
        scene.landmarks.len(),
        scene.matches.total_matches(),
        a.out.display()
    );
    EXIT_OK
}
