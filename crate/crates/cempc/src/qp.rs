//! Dense active-set solver for strictly convex quadratic programs.
//!
//! Implements the dual method of Goldfarb and Idnani (1983). The solver
//! starts from the unconstrained minimizer and adds violated constraints
//! one at a time, maintaining a QR factorization of the active-constraint
//! normals in the metric of the Hessian. It terminates with an exact
//! (to factorization accuracy) KKT point, which is what the per-step
//! decrease diagnostics downstream rely on.
//!
//! Problem form:
//!
//! ```text
//!     minimize    1/2 z' H z + g' z
//!     subject to  A_eq z  = b_eq
//!                 G    z <= h
//!                 lb <= z <= ub
//! ```
//!
//! `H` must be positive definite; callers with semidefinite Hessians add
//! their own regularization before calling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A dense strictly convex QP. Bounds may be infinite; equality and
/// inequality blocks may be empty (0 rows).
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_in: DMatrix<f64>,
    pub h_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Iteration cap; defaults to `10 * n_vars` when zero.
    pub max_iter: usize,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            g_in: DMatrix::zeros(0, n),
            h_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            max_iter: 0,
        }
    }
}

/// Where a multiplier in [`QpSolution`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    Inequality,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Objective value `1/2 z'Hz + g'z`.
    pub obj: f64,
    /// Multipliers for the equality rows (sign-free).
    pub eq_duals: DVector<f64>,
    /// Multipliers for the general inequality rows (>= 0).
    pub in_duals: DVector<f64>,
    /// Active constraints at the solution.
    pub active: Vec<(ConstraintKind, usize)>,
    pub iterations: usize,
    /// max of stationarity, feasibility, and complementarity residuals.
    pub kkt_residual: f64,
    pub comp_slackness: f64,
    pub converged: bool,
}

/// One constraint row in the internal `c' z >= b` form used by the dual
/// method (`dir` folds the original sense into the normal).
struct Row {
    kind: ConstraintKind,
    index: usize,
    normal: DVector<f64>,
    rhs: f64,
    norm: f64,
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let n = p.g.len();
    if p.h.nrows() != n || p.h.ncols() != n {
        return Err(Error::Dimension(format!(
            "qp hessian is {}x{}, expected {n}x{n}",
            p.h.nrows(),
            p.h.ncols()
        )));
    }
    if p.a_eq.nrows() != p.b_eq.len() || (p.a_eq.nrows() > 0 && p.a_eq.ncols() != n) {
        return Err(Error::Dimension("qp equality block".into()));
    }
    if p.g_in.nrows() != p.h_in.len() || (p.g_in.nrows() > 0 && p.g_in.ncols() != n) {
        return Err(Error::Dimension("qp inequality block".into()));
    }

    let rows = collect_rows(p, n);
    let max_iter = if p.max_iter == 0 { 10 * n.max(4) } else { p.max_iter };

    let chol = p
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::QpInternal("indefinite or singular Hessian".into()))?;

    // J = L^-T; its columns are rotated as constraints enter and leave.
    let mut j = DMatrix::<f64>::identity(n, n);
    chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut j);
    j.transpose_mut();

    let mut z = chol.solve(&(-&p.g));

    // Active set state: R holds the triangular factor of the transformed
    // normals, u the (internal, nonnegative) multipliers, dir the sign that
    // folded each row into `>=` form.
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);
    let mut dir: Vec<f64> = Vec::with_capacity(n);

    let mut d = DVector::<f64>::zeros(n);
    let mut step_dir = DVector::<f64>::zeros(n);

    let mut iterations = 0usize;
    let mut converged = true;

    loop {
        // Most-violated constraint, violation normalized by the row norm.
        let z_scale = 1.0 + z.amax();
        let tol = 1e-11 * z_scale;
        let mut worst = tol;
        let mut pick: Option<(usize, f64)> = None;
        for (i, row) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = row.normal.dot(&z) - row.rhs;
            let (viol, sign) = match row.kind {
                ConstraintKind::Equality => (s.abs() / row.norm, -s.signum()),
                _ => (s / row.norm, -1.0),
            };
            if viol > worst {
                worst = viol;
                pick = Some((i, sign));
            }
        }
        let Some((add_idx, add_dir)) = pick else {
            break;
        };

        // c' z >= rhs_bar with c = add_dir * normal.
        let c = rows[add_idx].normal.scale(add_dir);
        let rhs_bar = add_dir * rows[add_idx].rhs;
        let mut u_add = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                converged = false;
                break;
            }

            d.gemv_tr(1.0, &j, &c, 0.0);
            let q = active.len();

            step_dir.fill(0.0);
            for k in q..n {
                step_dir.axpy(d[k], &j.column(k), 1.0);
            }
            // Dual step direction r_vec = R^-1 d[..q].
            let mut r_vec = vec![0.0; q];
            for k in (0..q).rev() {
                let mut s = d[k];
                for m in k + 1..q {
                    s -= r[(k, m)] * r_vec[m];
                }
                r_vec[k] = s / r[(k, k)];
            }

            // Blocking dual constraint (equalities never leave).
            let mut t1 = f64::INFINITY;
            let mut del: Option<usize> = None;
            for k in 0..q {
                if rows[active[k]].kind != ConstraintKind::Equality && r_vec[k] > 0.0 {
                    let t = u[k] / r_vec[k];
                    if t < t1 {
                        t1 = t;
                        del = Some(k);
                    }
                }
            }

            let slack = rhs_bar - c.dot(&z);
            let ztc = step_dir.dot(&c);
            let t2 = if ztc <= f64::EPSILON * c.norm() * step_dir.norm() + f64::MIN_POSITIVE {
                f64::INFINITY
            } else {
                slack / ztc
            };

            if !t1.is_finite() && !t2.is_finite() {
                return Err(Error::QpInternal(
                    "primal infeasible (dual unbounded)".into(),
                ));
            }

            let t = t1.min(t2);
            if t.is_finite() && t > 0.0 {
                z.axpy(t, &step_dir, 1.0);
                for k in 0..q {
                    u[k] -= t * r_vec[k];
                }
                u_add += t;
            }

            if t2 <= t1 {
                // Full step: the new constraint enters the active set.
                active.push(add_idx);
                dir.push(add_dir);
                u.push(u_add);
                qr_insert(active.len(), &mut d, &mut j);
                for k in 0..active.len() {
                    r[(k, active.len() - 1)] = d[k];
                }
                break;
            }

            // Partial step: drop the blocking constraint and retry.
            let k = del.expect("finite t1 implies a blocking index");
            qr_delete(k, active.len(), &mut j, &mut r);
            active.remove(k);
            dir.remove(k);
            u.remove(k);
        }

        if !converged {
            break;
        }
    }

    finish(p, rows, z, active, u, dir, iterations, converged)
}

fn collect_rows(p: &QpProblem, n: usize) -> Vec<Row> {
    let mut rows = Vec::new();
    for i in 0..p.a_eq.nrows() {
        let normal = p.a_eq.row(i).transpose();
        let norm = normal.norm().max(f64::MIN_POSITIVE);
        rows.push(Row { kind: ConstraintKind::Equality, index: i, normal, rhs: p.b_eq[i], norm });
    }
    for i in 0..p.g_in.nrows() {
        let normal = p.g_in.row(i).transpose();
        let norm = normal.norm().max(f64::MIN_POSITIVE);
        rows.push(Row { kind: ConstraintKind::Inequality, index: i, normal, rhs: p.h_in[i], norm });
    }
    for k in 0..n {
        if p.lb[k].is_finite() {
            let mut normal = DVector::zeros(n);
            normal[k] = -1.0;
            rows.push(Row { kind: ConstraintKind::Lower, index: k, normal, rhs: -p.lb[k], norm: 1.0 });
        }
        if p.ub[k].is_finite() {
            let mut normal = DVector::zeros(n);
            normal[k] = 1.0;
            rows.push(Row { kind: ConstraintKind::Upper, index: k, normal, rhs: p.ub[k], norm: 1.0 });
        }
    }
    rows
}

/// Rotate components `q..n` of `d` into `d[q-1]`, applying the same Givens
/// rotations to the columns of `j`.
fn qr_insert(q: usize, d: &mut DVector<f64>, j: &mut DMatrix<f64>) {
    let n = d.len();
    for i in (q..n).rev() {
        if d[i] == 0.0 {
            continue;
        }
        let (gc, gs, h) = givens(d[i - 1], d[i]);
        d[i - 1] = h;
        d[i] = 0.0;
        rotate_columns(j, i - 1, i, gc, gs);
    }
}

/// Remove active column `k` (of `q` total), restoring R to triangular form.
fn qr_delete(k: usize, q: usize, j: &mut DMatrix<f64>, r: &mut DMatrix<f64>) {
    let n = j.nrows();
    for col in k..q - 1 {
        for row in 0..n {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for col in 0..n {
        r[(col, q - 1)] = 0.0;
    }
    for i in k..q - 1 {
        if r[(i + 1, i)] == 0.0 {
            continue;
        }
        let (gc, gs, h) = givens(r[(i, i)], r[(i + 1, i)]);
        r[(i, i)] = h;
        r[(i + 1, i)] = 0.0;
        for col in i + 1..q - 1 {
            let a = r[(i, col)];
            let b = r[(i + 1, col)];
            r[(i, col)] = gc * a + gs * b;
            r[(i + 1, col)] = -gs * a + gc * b;
        }
        rotate_columns(j, i, i + 1, gc, gs);
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b).copysign(if a == 0.0 { b } else { a });
    (a / h, b / h, h)
}

fn rotate_columns(j: &mut DMatrix<f64>, c1: usize, c2: usize, gc: f64, gs: f64) {
    for row in 0..j.nrows() {
        let a = j[(row, c1)];
        let b = j[(row, c2)];
        j[(row, c1)] = gc * a + gs * b;
        j[(row, c2)] = -gs * a + gc * b;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &QpProblem,
    rows: Vec<Row>,
    z: DVector<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    dir: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<QpSolution> {
    let obj = 0.5 * z.dot(&(&p.h * &z)) + p.g.dot(&z);

    // Stationarity: Hz + g - sum_i u_i * dir_i * normal_i = 0.
    let mut grad = &p.h * &z + &p.g;
    let mut eq_duals = DVector::zeros(p.a_eq.nrows());
    let mut in_duals = DVector::zeros(p.g_in.nrows());
    let mut active_out = Vec::with_capacity(active.len());
    let mut comp: f64 = 0.0;
    for (k, &idx) in active.iter().enumerate() {
        let row = &rows[idx];
        grad.axpy(-u[k] * dir[k], &row.normal, 1.0);
        match row.kind {
            // External convention: Hz + g + A_eq' y = 0.
            ConstraintKind::Equality => eq_duals[row.index] = -dir[k] * u[k],
            ConstraintKind::Inequality => in_duals[row.index] = u[k],
            _ => {}
        }
        comp = comp.max((u[k] * (row.normal.dot(&z) - row.rhs)).abs());
        active_out.push((row.kind, row.index));
    }

    let mut feas: f64 = 0.0;
    for row in &rows {
        let s = row.normal.dot(&z) - row.rhs;
        let v = match row.kind {
            ConstraintKind::Equality => s.abs(),
            _ => s.max(0.0),
        };
        feas = feas.max(v);
    }

    let kkt_residual = grad.amax().max(feas).max(comp);
    Ok(QpSolution {
        z,
        obj,
        eq_duals,
        in_duals,
        active: active_out,
        iterations,
        kkt_residual,
        comp_slackness: comp,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn unconstrained_norm_min_is_zero() {
        let p = QpProblem::new(2.0 * eye(3), DVector::zeros(3));
        let s = solve_qp(&p).unwrap();
        assert!(s.z.amax() < 1e-12);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn clamped_scalar() {
        // min (z-2)^2 over z in [0,1] -> z = 1.
        let mut p = QpProblem::new(2.0 * eye(1), DVector::from_element(1, -4.0));
        p.lb[0] = 0.0;
        p.ub[0] = 1.0;
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.z[0], 1.0, epsilon = 1e-12);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn equality_constrained_split() {
        // min z1^2 + z2^2 s.t. z1 + z2 = 1 -> (0.5, 0.5), y = -1.
        let mut p = QpProblem::new(2.0 * eye(2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 1.0);
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.z[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.z[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.eq_duals[0], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn general_inequalities_and_drop() {
        // min 1/2||z||^2 - 5 z2 s.t. 4z1+3z2 <= 8, 2z1+z2 >= 2, 2z2 - z3 <= 0.
        let mut p = QpProblem::new(eye(3), DVector::from_column_slice(&[0.0, -5.0, 0.0]));
        p.g_in = DMatrix::from_row_slice(3, 3, &[4.0, 3.0, 0.0, -2.0, -1.0, 0.0, 0.0, 2.0, -1.0]);
        p.h_in = DVector::from_column_slice(&[8.0, -2.0, 0.0]);
        let s = solve_qp(&p).unwrap();
        assert!(s.kkt_residual < 1e-9, "kkt {}", s.kkt_residual);
        for (i, lam) in s.in_duals.iter().enumerate() {
            assert!(*lam >= -1e-10, "dual {i} negative: {lam}");
        }
        // Optimum is interior to constraint 1, active on 0 and 2.
        let c0 = 4.0 * s.z[0] + 3.0 * s.z[1];
        assert!(c0 <= 8.0 + 1e-9);
    }

    #[test]
    fn infeasible_rows_error() {
        let mut p = QpProblem::new(eye(1), DVector::zeros(1));
        p.g_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        p.h_in = DVector::from_column_slice(&[-1.0, -1.0]); // z <= -1 and z >= 1
        assert!(solve_qp(&p).is_err());
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let p = QpProblem::new(-eye(2), DVector::zeros(2));
        assert!(matches!(solve_qp(&p), Err(Error::QpInternal(_))));
    }

    #[test]
    fn random_qps_satisfy_kkt() {
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for case in 0..100 {
            let n = 3 + case % 5;
            let m = DMatrix::from_fn(n, n, |_, _| next());
            let h = &m * m.transpose() + eye(n);
            let g = DVector::from_fn(n, |_, _| next());
            let z_feas = DVector::from_fn(n, |_, _| 0.5 * next());
            let mut p = QpProblem::new(h, g);
            let neq = case % 3;
            if neq > 0 {
                p.a_eq = DMatrix::from_fn(neq, n, |_, _| next());
                p.b_eq = &p.a_eq * &z_feas;
            }
            let nin = 2 + case % 4;
            p.g_in = DMatrix::from_fn(nin, n, |_, _| next());
            p.h_in = &p.g_in * &z_feas + DVector::from_fn(nin, |_, _| 0.1 + next().abs());
            p.lb = z_feas.map(|v| v - 1.0 - next().abs());
            p.ub = z_feas.map(|v| v + 1.0 + next().abs());
            let s = solve_qp(&p).unwrap_or_else(|e| panic!("case {case}: {e}"));
            assert!(s.converged, "case {case} hit the iteration cap");
            assert!(s.kkt_residual < 1e-8, "case {case}: kkt {}", s.kkt_residual);
        }
    }
}
