//! Minimal five-point essential matrix solver.
//!
//! The essential matrix is written as `E = x*E0 + y*E1 + z*E2 + E3` over the
//! null space of the five epipolar constraints. The cubic trace and
//! determinant constraints give ten equations in twenty monomials; after
//! Gauss-Jordan elimination `x` and `y` are hidden, leaving a 3x3 polynomial
//! matrix in `z` whose determinant is a degree-10 polynomial.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

/// Dense polynomial in (x, y, z) of total degree at most 3, indexed by exponents.
#[derive(Clone, Copy)]
struct Poly([[[f64; 4]; 4]; 4]);

impl Poly {
    fn zero() -> Self {
        Poly([[[0.0; 4]; 4]; 4])
    }

    fn linear(x: f64, y: f64, z: f64, c: f64) -> Self {
        let mut p = Self::zero();
        p.0[1][0][0] = x;
        p.0[0][1][0] = y;
        p.0[0][0][1] = z;
        p.0[0][0][0] = c;
        p
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut r = *self;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    r.0[a][b][c] += o.0[a][b][c];
                }
            }
        }
        r
    }

    fn scale(&self, s: f64) -> Poly {
        let mut r = *self;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    r.0[a][b][c] *= s;
                }
            }
        }
        r
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero();
        for &(a1, b1, c1) in MONOMIALS.iter() {
            let v = self.0[a1][b1][c1];
            if v == 0.0 {
                continue;
            }
            let d1 = a1 + b1 + c1;
            for &(a2, b2, c2) in MONOMIALS.iter() {
                if d1 + a2 + b2 + c2 > 3 {
                    continue;
                }
                r.0[a1 + a2][b1 + b2][c1 + c2] += v * o.0[a2][b2][c2];
            }
        }
        r
    }
}

/// Monomial order of the elimination template.
const MONOMIALS: [(usize, usize, usize); 20] = [
    (3, 0, 0),
    (0, 3, 0),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (2, 0, 0),
    (0, 2, 1),
    (0, 2, 0),
    (1, 1, 1),
    (1, 1, 0),
    (1, 0, 2),
    (1, 0, 1),
    (1, 0, 0),
    (0, 1, 2),
    (0, 1, 1),
    (0, 1, 0),
    (0, 0, 3),
    (0, 0, 2),
    (0, 0, 1),
    (0, 0, 0),
];

type PMat = [[Poly; 3]; 3];

fn pmat_mul(a: &PMat, b: &PMat) -> PMat {
    let mut r = [[Poly::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Poly::zero();
            for k in 0..3 {
                acc = acc.add(&a[i][k].mul(&b[k][j]));
            }
            r[i][j] = acc;
        }
    }
    r
}

fn pmat_transpose(a: &PMat) -> PMat {
    let mut r = *a;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

/// Polynomial in one variable, coefficients in ascending order.
fn upoly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            r[i + j] += x * y;
        }
    }
    r
}

fn upoly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn upoly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn upoly_eval(p: &[f64], z: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

fn upoly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| i as f64 * c)
        .collect()
}

/// Real roots through the companion matrix, polished by Newton steps.
fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = p[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let dp = upoly_deriv(&p[..=deg]);
    let mut roots = Vec::new();
    for ev in eig.iter() {
        if ev.im.abs() > 1e-6 * (1.0 + ev.re.abs()) {
            continue;
        }
        let mut z = ev.re;
        for _ in 0..3 {
            let d = upoly_eval(&dp, z);
            if d == 0.0 {
                break;
            }
            let step = upoly_eval(&p[..=deg], z) / d;
            if !step.is_finite() {
                break;
            }
            z -= step;
        }
        if z.is_finite() {
            roots.push(z);
        }
    }
    roots
}

/// Solves for the essential matrices consistent with five correspondences
/// `x_j^T E x_i = 0` in normalized homogeneous coordinates.
///
/// Returns up to ten real solutions; an empty vector signals a degenerate sample.
pub fn five_point(xi: &[Vector3<f64>; 5], xj: &[Vector3<f64>; 5]) -> Vec<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..5 {
        for r in 0..3 {
            for c in 0..3 {
                a[(k, r * 3 + c)] = xj[k][r] * xi[k][c];
            }
        }
    }
    let svd = a.svd(false, true);
    let Some(vt) = svd.v_t else {
        return Vec::new();
    };
    // Rank check on the five constraints: the fifth singular value must not vanish.
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[4] < 1e-10 * sv[0] {
        return Vec::new();
    }
    // Null space: right singular vectors for the four zero singular values.
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    let basis: Vec<Matrix3<f64>> = order[..4]
        .iter()
        .map(|&i| {
            let row = vt.row(i);
            Matrix3::new(
                row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8],
            )
        })
        .collect();

    let mut e: PMat = [[Poly::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            e[r][c] = Poly::linear(
                basis[0][(r, c)],
                basis[1][(r, c)],
                basis[2][(r, c)],
                basis[3][(r, c)],
            );
        }
    }

    let mut eqs: Vec<Poly> = Vec::with_capacity(10);
    let det = e[0][0]
        .mul(
            &e[1][1]
                .mul(&e[2][2])
                .add(&e[1][2].mul(&e[2][1]).scale(-1.0)),
        )
        .add(
            &e[0][1]
                .mul(
                    &e[1][0]
                        .mul(&e[2][2])
                        .add(&e[1][2].mul(&e[2][0]).scale(-1.0)),
                )
                .scale(-1.0),
        )
        .add(
            &e[0][2].mul(
                &e[1][0]
                    .mul(&e[2][1])
                    .add(&e[1][1].mul(&e[2][0]).scale(-1.0)),
            ),
        );
    eqs.push(det);
    let eet = pmat_mul(&e, &pmat_transpose(&e));
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = pmat_mul(&eet, &e);
    for r in 0..3 {
        for c in 0..3 {
            eqs.push(eete[r][c].scale(2.0).add(&trace.mul(&e[r][c]).scale(-1.0)));
        }
    }

    let mut m = DMatrix::<f64>::zeros(10, 20);
    for (row, eq) in eqs.iter().enumerate() {
        for (col, &(a, b, c)) in MONOMIALS.iter().enumerate() {
            m[(row, col)] = eq.0[a][b][c];
        }
    }
    let lhs = m.columns(0, 10).into_owned();
    let rhs = m.columns(10, 10).into_owned();
    let Some(bm) = lhs.lu().solve(&rhs) else {
        return Vec::new();
    };
    if bm.iter().any(|v| !v.is_finite()) {
        return Vec::new();
    }

    // Rows (4,5), (6,7), (8,9) pair a monomial with its z-multiple.
    let hidden_row = |e: usize, f: usize| -> [Vec<f64>; 3] {
        let b = |r: usize, k: usize| bm[(r, k)];
        [
            vec![b(e, 2), b(e, 1) - b(f, 2), b(e, 0) - b(f, 1), -b(f, 0)],
            vec![b(e, 5), b(e, 4) - b(f, 5), b(e, 3) - b(f, 4), -b(f, 3)],
            vec![
                b(e, 9),
                b(e, 8) - b(f, 9),
                b(e, 7) - b(f, 8),
                b(e, 6) - b(f, 7),
                -b(f, 6),
            ],
        ]
    };
    let rows = [hidden_row(4, 5), hidden_row(6, 7), hidden_row(8, 9)];

    let cof = |r1: usize, c1: usize, r2: usize, c2: usize| -> Vec<f64> {
        upoly_sub(
            &upoly_mul(&rows[r1][c1], &rows[r2][c2]),
            &upoly_mul(&rows[r1][c2], &rows[r2][c1]),
        )
    };
    let det_z = upoly_add(
        &upoly_sub(
            &upoly_mul(&rows[0][0], &cof(1, 1, 2, 2)),
            &upoly_mul(&rows[0][1], &cof(1, 0, 2, 2)),
        ),
        &upoly_mul(&rows[0][2], &cof(1, 0, 2, 1)),
    );

    let mut out = Vec::new();
    for z in real_roots(&det_z) {
        let mz = Matrix3::from_fn(|r, c| upoly_eval(&rows[r][c], z));
        let r0: Vector3<f64> = mz.row(0).transpose();
        let r1: Vector3<f64> = mz.row(1).transpose();
        let r2: Vector3<f64> = mz.row(2).transpose();
        let cands = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
        let v = cands
            .iter()
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .copied()
            .unwrap();
        if v.z.abs() < 1e-14 * v.norm() || v.norm() == 0.0 {
            continue;
        }
        let x = v.x / v.z;
        let y = v.y / v.z;
        let em = basis[0] * x + basis[1] * y + basis[2] * z + basis[3];
        let n = em.norm();
        if n > 0.0 && n.is_finite() {
            out.push(em / n);
        }
    }
    out
}
