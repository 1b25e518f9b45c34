//! Small dense linear programs via two-phase primal simplex.
//!
//! Sized for the certificate computations (a handful of variables); uses
//! Bland's rule throughout, so it cannot cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// maximize c'x  subject to  A x (sense) b,  x >= 0.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub senses: Vec<Sense>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Unbounded,
    Infeasible,
}

const PIVOT_TOL: f64 = 1e-11;

pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome> {
    let m = p.a.nrows();
    let n = p.a.ncols();
    if p.b.len() != m || p.senses.len() != m || p.c.len() != n {
        return Err(Error::Dimension("lp blocks disagree".into()));
    }

    // Standard form: flip rows to b >= 0, add slack/surplus, then one
    // artificial per row (phase 1 drives them to zero).
    let mut n_slack = 0;
    for s in &p.senses {
        if *s != Sense::Eq {
            n_slack += 1;
        }
    }
    let total = n + n_slack + m;
    let mut a = DMatrix::<f64>::zeros(m, total);
    let mut b = DVector::<f64>::zeros(m);
    let mut slack_col = n;
    for i in 0..m {
        let flip = p.b[i] < 0.0;
        let sgn = if flip { -1.0 } else { 1.0 };
        for jv in 0..n {
            a[(i, jv)] = sgn * p.a[(i, jv)];
        }
        b[i] = sgn * p.b[i];
        let slack_sgn = match p.senses[i] {
            Sense::Le => Some(sgn),
            Sense::Ge => Some(-sgn),
            Sense::Eq => None,
        };
        if let Some(s) = slack_sgn {
            a[(i, slack_col)] = s;
            slack_col += 1;
        }
        a[(i, n + n_slack + i)] = 1.0;
    }

    let mut basis: Vec<usize> = (0..m).map(|i| n + n_slack + i).collect();
    let mut tableau_b = b.clone();
    // Phase 1: minimize the sum of artificials.
    let mut cost1 = DVector::<f64>::zeros(total);
    for i in 0..m {
        cost1[n + n_slack + i] = 1.0;
    }
    let phase1 = simplex(&mut a, &mut tableau_b, &cost1, &mut basis, n + n_slack + m)?;
    if phase1 == Phase::Unbounded {
        return Err(Error::QpInternal("phase-1 LP unbounded".into()));
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n + n_slack)
        .map(|(i, _)| tableau_b[i])
        .sum();
    if infeas > 1e-8 {
        return Ok(LpOutcome::Infeasible);
    }
    // Pivot residual artificials out of the basis where possible.
    for i in 0..m {
        if basis[i] >= n + n_slack {
            if let Some(jv) = (0..n + n_slack).find(|&jv| a[(i, jv)].abs() > 1e-9) {
                pivot(&mut a, &mut tableau_b, &mut basis, i, jv);
            }
        }
    }

    // Phase 2: maximize c'x == minimize -c'x over the original columns only.
    let mut cost2 = DVector::<f64>::zeros(total);
    for jv in 0..n {
        cost2[jv] = -p.c[jv];
    }
    match simplex(&mut a, &mut tableau_b, &cost2, &mut basis, n + n_slack)? {
        Phase::Unbounded => Ok(LpOutcome::Unbounded),
        Phase::Optimal => {
            let mut x = DVector::<f64>::zeros(n);
            for (i, &j) in basis.iter().enumerate() {
                if j < n {
                    x[j] = tableau_b[i];
                }
            }
            let value = p.c.dot(&x);
            Ok(LpOutcome::Optimal { x, value })
        }
    }
}

#[derive(PartialEq)]
enum Phase {
    Optimal,
    Unbounded,
}

/// Revised-tableau simplex with Bland's rule; columns `>= allowed` are
/// barred from entering (used to lock out artificials in phase 2).
fn simplex(
    a: &mut DMatrix<f64>,
    b: &mut DVector<f64>,
    cost: &DVector<f64>,
    basis: &mut Vec<usize>,
    allowed: usize,
) -> Result<Phase> {
    let m = a.nrows();
    let total = a.ncols();
    for _ in 0..20_000 {
        // Reduced costs r_j = c_j - c_B' B^-1 a_j over the current tableau.
        let mut entering = None;
        for jv in 0..allowed.min(total) {
            if basis.contains(&jv) {
                continue;
            }
            let mut r = cost[jv];
            for i in 0..m {
                r -= cost[basis[i]] * a[(i, jv)];
            }
            if r < -PIVOT_TOL {
                entering = Some(jv);
                break; // Bland: smallest eligible index
            }
        }
        let Some(jv) = entering else {
            return Ok(Phase::Optimal);
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if a[(i, jv)] > PIVOT_TOL {
                let ratio = b[i] / a[(i, jv)];
                if ratio < best - PIVOT_TOL
                    || (ratio < best + PIVOT_TOL
                        && leave.is_some_and(|l: usize| basis[i] < basis[l]))
                {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(i) = leave else {
            return Ok(Phase::Unbounded);
        };
        pivot(a, b, basis, i, jv);
    }
    Err(Error::QpInternal("simplex iteration cap".into()))
}

fn pivot(a: &mut DMatrix<f64>, b: &mut DVector<f64>, basis: &mut [usize], row: usize, col: usize) {
    let m = a.nrows();
    let piv = a[(row, col)];
    for jv in 0..a.ncols() {
        a[(row, jv)] /= piv;
    }
    b[row] /= piv;
    for i in 0..m {
        if i == row {
            continue;
        }
        let f = a[(i, col)];
        if f == 0.0 {
            continue;
        }
        for jv in 0..a.ncols() {
            a[(i, jv)] -= f * a[(row, jv)];
        }
        b[i] -= f * b[row];
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basic_max() {
        // max x + y s.t. x + 2y <= 4, x <= 3 -> x = 3, y = 0.5.
        let p = LpProblem {
            c: DVector::from_column_slice(&[1.0, 1.0]),
            a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 0.0]),
            b: DVector::from_column_slice(&[4.0, 3.0]),
            senses: vec![Sense::Le, Sense::Le],
        };
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert_relative_eq!(value, 3.5, epsilon = 1e-9);
                assert_relative_eq!(x[0], 3.0, epsilon = 1e-9);
                assert_relative_eq!(x[1], 0.5, epsilon = 1e-9);
            }
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn detects_unbounded() {
        let p = LpProblem {
            c: DVector::from_column_slice(&[1.0]),
            a: DMatrix::from_row_slice(1, 1, &[-1.0]),
            b: DVector::from_column_slice(&[0.0]),
            senses: vec![Sense::Le],
        };
        assert!(matches!(solve_lp(&p).unwrap(), LpOutcome::Unbounded));
    }

    #[test]
    fn detects_infeasible() {
        // x <= -1 with x >= 0.
        let p = LpProblem {
            c: DVector::from_column_slice(&[1.0]),
            a: DMatrix::from_row_slice(1, 1, &[1.0]),
            b: DVector::from_column_slice(&[-1.0]),
            senses: vec![Sense::Le],
        };
        assert!(matches!(solve_lp(&p).unwrap(), LpOutcome::Infeasible));
    }

    #[test]
    fn equality_rows() {
        // max x1 s.t. x1 + x2 = 1 -> 1.
        let p = LpProblem {
            c: DVector::from_column_slice(&[1.0, 0.0]),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_column_slice(&[1.0]),
            senses: vec![Sense::Eq],
        };
        match solve_lp(&p).unwrap() {
            LpOutcome::Optimal { value, .. } => assert_relative_eq!(value, 1.0, epsilon = 1e-9),
            other => panic!("expected optimum, got {other:?}"),
        }
    }
}
