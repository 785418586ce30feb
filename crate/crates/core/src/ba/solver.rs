//! Levenberg-Marquardt over the camera/point block structure.
//!
//! Point blocks are eliminated with the Schur complement; the reduced camera
//! system is solved densely by Cholesky. Huber reprojection residuals are
//! handled by iteratively reweighted least squares.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector2, Vector3};
use rayon::prelude::*;

use super::residuals::*;
use super::{BaConfig, BaError, BaProblem, CostBreakdown};
use crate::geometry::so3_exp;
use crate::loss::huber_weight;

#[derive(Debug, Clone, PartialEq)]
pub struct BaReport {
    pub initial: CostBreakdown,
    pub final_cost: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Observations behind their camera at the start, left out of the solve.
    pub behind_camera: usize,
    /// Total cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Layout {
    cameras: Vec<[Option<usize>; 6]>,
    groups: Vec<Option<usize>>,
    points: Vec<Option<usize>>,
    nc: usize,
    np: usize,
}

impl Layout {
    fn new(problem: &BaProblem) -> Self {
        let mut nc = 0;
        let mut cameras = Vec::with_capacity(problem.cameras.len());
        for c in &problem.cameras {
            let mut idx = [None; 6];
            for (k, slot) in idx.iter_mut().enumerate() {
                let fixed = if k < 3 {
                    c.fixed_rotation
                } else {
                    c.fixed_center[k - 3]
                };
                if !fixed {
                    *slot = Some(nc);
                    nc += 1;
                }
            }
            cameras.push(idx);
        }
        let groups = problem
            .groups
            .iter()
            .map(|g| {
                g.refine_focal.then(|| {
                    nc += 1;
                    nc - 1
                })
            })
            .collect();
        let mut np = 0;
        let points = problem
            .points
            .iter()
            .map(|p| {
                (!p.fixed).then(|| {
                    np += 1;
                    np - 1
                })
            })
            .collect();
        Self {
            cameras,
            groups,
            points,
            nc,
            np,
        }
    }
}

/// Linearized reprojection term: residual, IRLS weight, camera-side Jacobian
/// columns keyed by reduced parameter index, and the point Jacobian.
struct ObsLin {
    r: Vector2<f64>,
    w: f64,
    cam_cols: Vec<(usize, Vector2<f64>)>,
    jp: nalgebra::Matrix2x3<f64>,
}

fn linearize_observation(problem: &BaProblem, layout: &Layout, k: usize) -> Option<ObsLin> {
    let o = &problem.observations[k];
    let cam = &problem.cameras[o.camera];
    let jac = reprojection_jacobian(
        problem.intrinsics_of(o.camera),
        &cam.pose(),
        &problem.points[o.point].position,
        &o.pixel,
    )?;
    let w = huber_weight(jac.residual.norm_squared(), problem.huber_px);
    let mut cam_cols = Vec::with_capacity(7);
    let idx = &layout.cameras[o.camera];
    for a in 0..3 {
        if let Some(i) = idx[a] {
            cam_cols.push((i, jac.d_rotation.column(a).into_owned()));
        }
        if let Some(i) = idx[a + 3] {
            cam_cols.push((i, jac.d_center.column(a).into_owned()));
        }
    }
    if let Some(i) = layout.groups[cam.group] {
        cam_cols.push((i, jac.d_focal));
    }
    Some(ObsLin {
        r: jac.residual,
        w,
        cam_cols,
        jp: jac.d_point,
    })
}

struct Normal {
    h_cc: DMatrix<f64>,
    g_c: DVector<f64>,
    h_pp: Vec<Matrix3<f64>>,
    g_p: Vec<Vector3<f64>>,
    /// Per free point: merged off-diagonal rows `(camera index, J_c^T W J_p)`.
    w_rows: Vec<Vec<(usize, RowVector3<f64>)>>,
}

fn add_dense_term(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    cols: &[(usize, DVector<f64>)],
    r: &DVector<f64>,
) {
    for (a, ca) in cols {
        g[*a] += ca.dot(r);
        for (b, cb) in cols {
            h[(*a, *b)] += ca.dot(cb);
        }
    }
}

fn build_normal(problem: &BaProblem, layout: &Layout, active: &[bool]) -> Normal {
    let lins: Vec<Option<ObsLin>> = (0..problem.observations.len())
        .into_par_iter()
        .map(|k| {
            if active[k] {
                linearize_observation(problem, layout, k)
            } else {
                None
            }
        })
        .collect();

    let nc = layout.nc;
    let mut n = Normal {
        h_cc: DMatrix::zeros(nc, nc),
        g_c: DVector::zeros(nc),
        h_pp: vec![Matrix3::zeros(); layout.np],
        g_p: vec![Vector3::zeros(); layout.np],
        w_rows: vec![Vec::new(); layout.np],
    };
    for (k, lin) in lins.iter().enumerate() {
        let Some(l) = lin else { continue };
        for (a, ca) in &l.cam_cols {
            n.g_c[*a] += l.w * ca.dot(&l.r);
            for (b, cb) in &l.cam_cols {
                n.h_cc[(*a, *b)] += l.w * ca.dot(cb);
            }
        }
        if let Some(p) = layout.points[problem.observations[k].point] {
            n.h_pp[p] += l.w * l.jp.transpose() * l.jp;
            n.g_p[p] += l.w * l.jp.transpose() * l.r;
            for (a, ca) in &l.cam_cols {
                n.w_rows[p].push((*a, l.w * ca.transpose() * l.jp));
            }
        }
    }
    for rows in n.w_rows.iter_mut() {
        rows.sort_by_key(|(a, _)| *a);
        let mut merged: Vec<(usize, RowVector3<f64>)> = Vec::with_capacity(rows.len());
        for (a, v) in rows.drain(..) {
            match merged.last_mut() {
                Some((b, acc)) if *b == a => *acc += v,
                _ => merged.push((a, v)),
            }
        }
        *rows = merged;
    }

    for t in &problem.translation_priors {
        let idx = &layout.cameras[t.camera];
        let r = translation_prior_residual(&problem.cameras[t.camera].center, &t.target, t.weight);
        let j = translation_prior_jacobian(t.weight);
        let cols: Vec<(usize, DVector<f64>)> = (0..3)
            .filter_map(|a| {
                idx[3 + a].map(|i| (i, DVector::from_column_slice(j.column(a).as_slice())))
            })
            .collect();
        add_dense_term(
            &mut n.h_cc,
            &mut n.g_c,
            &cols,
            &DVector::from_column_slice(r.as_slice()),
        );
    }
    for t in &problem.rotation_priors {
        let (r, di, dj) = rotation_prior_jacobian(
            &problem.cameras[t.camera_i].rotation,
            &problem.cameras[t.camera_j].rotation,
            &t.target,
            t.weight,
        );
        let mut cols = Vec::new();
        for a in 0..3 {
            if let Some(i) = layout.cameras[t.camera_i][a] {
                cols.push((i, DVector::from_column_slice(di.column(a).as_slice())));
            }
            if let Some(i) = layout.cameras[t.camera_j][a] {
                cols.push((i, DVector::from_column_slice(dj.column(a).as_slice())));
            }
        }
        add_dense_term(
            &mut n.h_cc,
            &mut n.g_c,
            &cols,
            &DVector::from_column_slice(r.as_slice()),
        );
    }
    for t in &problem.motion_priors {
        let r = motion_prior_residual(
            &problem.cameras[t.camera_i].center,
            &problem.cameras[t.camera_j].center,
            &t.target,
            t.weight,
        );
        let mut cols = Vec::new();
        for a in 0..3 {
            let e = Vector3::ith(a, t.weight);
            if let Some(i) = layout.cameras[t.camera_i][3 + a] {
                cols.push((i, DVector::from_column_slice(e.as_slice())));
            }
            if let Some(i) = layout.cameras[t.camera_j][3 + a] {
                cols.push((i, DVector::from_column_slice((-e).as_slice())));
            }
        }
        add_dense_term(
            &mut n.h_cc,
            &mut n.g_c,
            &cols,
            &DVector::from_column_slice(r.as_slice()),
        );
    }
    n
}

fn clamp_diag(v: f64) -> f64 {
    v.clamp(1e-6, 1e32)
}

struct Step {
    dc: DVector<f64>,
    dp: Vec<Vector3<f64>>,
    predicted: f64,
}

fn solve_damped(n: &Normal, lambda: f64) -> Option<Step> {
    let nc = n.g_c.len();
    let mut s = n.h_cc.clone();
    let mut rhs = -n.g_c.clone();
    let dc_diag: Vec<f64> = (0..nc).map(|a| clamp_diag(n.h_cc[(a, a)])).collect();
    for a in 0..nc {
        s[(a, a)] += lambda * dc_diag[a];
    }
    let mut binv = Vec::with_capacity(n.h_pp.len());
    let mut dp_diag = Vec::with_capacity(n.h_pp.len());
    for (p, h) in n.h_pp.iter().enumerate() {
        let d = Vector3::new(
            clamp_diag(h[(0, 0)]),
            clamp_diag(h[(1, 1)]),
            clamp_diag(h[(2, 2)]),
        );
        let b = h + Matrix3::from_diagonal(&(lambda * d));
        let inv = b
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| b.try_inverse())?;
        let rows = &n.w_rows[p];
        let t: Vec<RowVector3<f64>> = rows.iter().map(|(_, w)| w * inv).collect();
        for (k, (a, _)) in rows.iter().enumerate() {
            rhs[*a] += (t[k] * n.g_p[p])[0];
            for (b_idx, wb) in rows {
                s[(*a, *b_idx)] -= t[k].dot(wb);
            }
        }
        binv.push(inv);
        dp_diag.push(d);
    }
    let dc = if nc > 0 {
        s.cholesky()?.solve(&rhs)
    } else {
        DVector::zeros(0)
    };
    if !dc.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut dp = Vec::with_capacity(n.h_pp.len());
    let mut predicted = 0.0;
    for (p, inv) in binv.iter().enumerate() {
        let mut r = -n.g_p[p];
        for (a, w) in &n.w_rows[p] {
            r -= w.transpose() * dc[*a];
        }
        let d = inv * r;
        predicted += d.dot(&(lambda * dp_diag[p].component_mul(&d) - n.g_p[p]));
        dp.push(d);
    }
    for a in 0..nc {
        predicted += dc[a] * (lambda * dc_diag[a] * dc[a] - n.g_c[a]);
    }
    Some(Step { dc, dp, predicted })
}

fn apply_step(problem: &BaProblem, layout: &Layout, step: &Step) -> BaProblem {
    let mut out = problem.clone();
    for (c, idx) in out.cameras.iter_mut().zip(&layout.cameras) {
        let get = |k: usize| idx[k].map_or(0.0, |i| step.dc[i]);
        let dr = Vector3::new(get(0), get(1), get(2));
        if dr != Vector3::zeros() {
            c.rotation = so3_exp(&dr) * c.rotation;
        }
        c.center += Vector3::new(get(3), get(4), get(5));
    }
    for (g, idx) in out.groups.iter_mut().zip(&layout.groups) {
        if let Some(i) = idx {
            g.intrinsics.focal = (g.intrinsics.focal + step.dc[*i]).clamp(g.focal_min, g.focal_max);
        }
    }
    for (p, idx) in out.points.iter_mut().zip(&layout.points) {
        if let Some(i) = idx {
            p.position += step.dp[*i];
        }
    }
    out
}

fn in_front(problem: &BaProblem, k: usize) -> bool {
    let o = &problem.observations[k];
    problem.cameras[o.camera]
        .pose()
        .world_to_optical(&problem.points[o.point].position)
        .z
        > 0.0
}

/// Runs Levenberg-Marquardt in place. Fails on an ungauged problem or when the
/// damped normal equations cannot be factored.
pub fn solve(problem: &mut BaProblem, cfg: &BaConfig) -> Result<BaReport, BaError> {
    problem.validate()?;
    let layout = Layout::new(problem);
    let active: Vec<bool> = (0..problem.observations.len())
        .map(|k| in_front(problem, k))
        .collect();
    let behind_camera = active.iter().filter(|a| !**a).count();

    let (initial, _) = problem.cost();
    let mut cost = initial.total();
    let mut report = BaReport {
        initial,
        final_cost: initial,
        iterations: 0,
        converged: false,
        behind_camera,
        cost_history: vec![cost],
    };
    if layout.nc + layout.np == 0 {
        report.converged = true;
        return Ok(report);
    }

    let mut lambda = 1e-4;
    let mut nu = 2.0;
    let mut last_rel = f64::INFINITY;
    let mut failures = 0;
    while report.iterations < cfg.max_iterations {
        if cost <= 1e-24 {
            report.converged = true;
            break;
        }
        let normal = build_normal(problem, &layout, &active);
        let gmax = normal
            .g_c
            .iter()
            .chain(normal.g_p.iter().flat_map(|g| g.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < cfg.gradient_tolerance {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let mut accepted = false;
        while !accepted {
            if lambda > 1e16 {
                report.converged = true;
                break;
            }
            let Some(step) = solve_damped(&normal, lambda) else {
                failures += 1;
                if failures > 40 {
                    return Err(BaError::RankDeficient);
                }
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let cand = apply_step(problem, &layout, &step);
            let feasible = (0..active.len()).all(|k| !active[k] || in_front(&cand, k));
            let new_cost = if feasible {
                cand.cost().0.total()
            } else {
                f64::INFINITY
            };
            let rho = (cost - new_cost) / step.predicted.max(1e-300);
            if new_cost < cost && new_cost.is_finite() {
                last_rel = (cost - new_cost) / cost;
                *problem = cand;
                cost = new_cost;
                report.cost_history.push(cost);
                lambda *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                lambda = lambda.max(1e-12);
                nu = 2.0;
                accepted = true;
            } else {
                lambda *= nu;
                nu *= 2.0;
            }
        }
        if report.converged {
            break;
        }
        if last_rel < cfg.function_tolerance {
            report.converged = true;
            break;
        }
    }
    if !report.converged && last_rel > 1e-6 {
        warn!(
            "bundle adjustment stopped after {} iterations with relative decrease {:.2e}",
            report.iterations, last_rel
        );
    } else {
        report.converged = true;
    }
    let (final_cost, _) = problem.cost();
    report.final_cost = final_cost;
    debug!(
        "ba: {} cams {} pts {} obs, cost {:.6e} -> {:.6e} in {} iterations",
        problem.cameras.len(),
        problem.points.len(),
        problem.observations.len(),
        report.initial.total(),
        final_cost.total(),
        report.iterations
    );
    Ok(report)
}
