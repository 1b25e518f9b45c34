//! Shared dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values()[0]
}

pub fn sym_eig_bounds(q: &DMatrix<f64>) -> (f64, f64) {
    let eig = q.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn check_sym_pd(q: &DMatrix<f64>, name: &str) -> Result<()> {
    if q.nrows() != q.ncols() {
        return Err(Error::Dimension(format!("{name} is not square")));
    }
    let asym = (q - q.transpose()).amax();
    if asym > 1e-9 * (1.0 + q.amax()) {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    let (min, _) = sym_eig_bounds(q);
    if min <= 0.0 {
        return Err(Error::Config(format!("{name} is not positive definite (min eig {min:.3e})")));
    }
    Ok(())
}

/// Upper factor U with U'U = Q, so that ||U x|| = ||x||_Q.
pub fn chol_upper(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("weight matrix is not positive definite".into()))?;
    Ok(chol.l().transpose())
}

pub fn weighted_norm_sq(x: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    x.dot(&(q * x))
}

/// Fixed-point iteration for the discrete algebraic Riccati equation
/// P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..max_iter {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gain = gram
            .clone()
            .cholesky()
            .ok_or(Error::NotStabilizable)?
            .solve(&(&btp * a));
        let pn = q + a.transpose() * &p * a - (a.transpose() * &p * b) * &gain;
        let delta = (&pn - &p).amax();
        p = pn;
        if delta < 1e-13 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::NotStabilizable)
}

/// LQR gain K with u = u_s + K (x - x_s); K = -(R + B'PB)^-1 B'PA.
pub fn dare_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let gram = r + &btp * b;
    let k = gram
        .cholesky()
        .ok_or(Error::NotStabilizable)?
        .solve(&(&btp * a));
    Ok(-k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_radius_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.9, 0.5]));
        assert_relative_eq!(spectral_radius(&a), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn dare_scalar_matches_fixed_point_oracle() {
        // a=0.5, b=1, q=r=1.
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::identity(1, 1);
        let r = DMatrix::identity(1, 1);
        let p = solve_dare(&a, &b, &q, &r, 10_000).unwrap();
        // Oracle: naive fixed point with plain f64 arithmetic.
        let mut po = 1.0f64;
        for _ in 0..10_000 {
            po = 1.0 + 0.25 * po - (0.5 * po) * (0.5 * po) / (1.0 + po);
        }
        assert_relative_eq!(p[(0, 0)], po, epsilon = 1e-10);
        let k = dare_gain(&a, &b, &r, &p).unwrap();
        assert!((0.5 + k[(0, 0)]).abs() < 1.0, "closed loop unstable");
    }

    #[test]
    fn dare_zero_dynamics_returns_q() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0]));
        let r = DMatrix::identity(1, 1);
        let p = solve_dare(&a, &b, &q, &r, 100).unwrap();
        assert_relative_eq!((&p - &q).amax(), 0.0, epsilon = 1e-12);
        let k = dare_gain(&a, &b, &r, &p).unwrap();
        assert_relative_eq!(k.amax(), 0.0, epsilon = 1e-12);
    }
}
