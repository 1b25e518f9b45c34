//! Planar quadrotor with uncertain thrust and torque effectiveness,
//! Euler-discretized, navigating half-space obstacle rows.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::model::{ConstraintSpec, Dims, ParameterSet, ParametricModel};

pub const GRAVITY: f64 = 9.81;

/// Benchmark parameters. The obstacle corridor and the velocity/angle
/// bounds are artifact defaults, not published values.
#[derive(Debug, Clone)]
pub struct QuadParams {
    pub dt: f64,
    /// True thrust effectiveness theta_1 (acceleration per unit input).
    pub theta1: f64,
    /// True torque effectiveness theta_2.
    pub theta2: f64,
    /// Initial estimate = factor * true parameters.
    pub estimate_factor: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    /// Corridor half-width |p2| <= corridor.
    pub corridor: f64,
    pub v_max: f64,
    pub phi_max: f64,
    pub q_xi: f64,
    /// Steady-state input margin for the regional variant.
    pub u_margin: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            dt: 0.025,
            theta1: 2.0,
            theta2: 25.0,
            estimate_factor: 2.0,
            u_lo: -1.0,
            u_hi: 4.0,
            corridor: 0.35,
            v_max: 3.0,
            phi_max: 0.5,
            q_xi: 10.0,
            u_margin: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadBundle {
    pub model: ParametricModel,
    pub theta_set: ParameterSet,
    pub theta_true: DVector<f64>,
    pub theta_hat0: DVector<f64>,
    pub constraints: ConstraintSpec,
    pub dt: f64,
}

/// Continuous-time dynamics; state [p1, p2, phi, v1, v2, phidot] with
/// body-frame velocities and thrust along the body vertical.
pub fn quad_rhs(x: &DVector<f64>, u: &DVector<f64>, theta: &DVector<f64>, w: f64) -> DVector<f64> {
    let (phi, v1, v2, phidot) = (x[2], x[3], x[4], x[5]);
    let (s, c) = phi.sin_cos();
    DVector::from_column_slice(&[
        v1 * c - v2 * s,
        v1 * s + v2 * c,
        phidot,
        v2 * phidot - GRAVITY * s + c * w,
        -v1 * phidot - GRAVITY * c + theta[0] * (u[0] + u[1]) - s * w,
        theta[1] * (u[0] - u[1]),
    ])
}

pub fn build_quadrotor(p: &QuadParams) -> Result<QuadBundle> {
    if p.dt <= 0.0 {
        return Err(Error::Config("sampling time must be positive".into()));
    }
    let dt = p.dt;
    let dims = Dims { n_x: 6, n_u: 2, n_theta: 2, n_w: 1, n_y: 2 };

    let f = Arc::new(
        move |x: &DVector<f64>, u: &DVector<f64>, th: &DVector<f64>, w: &DVector<f64>| {
            x + quad_rhs(x, u, th, w[0]) * dt
        },
    );
    // Exactly linear in theta: columns scale (u1+u2) into v2dot and
    // (u1-u2) into phiddot.
    let regressor = Arc::new(move |_x: &DVector<f64>, u: &DVector<f64>, _w: &DVector<f64>| {
        let mut g = DMatrix::zeros(6, 2);
        g[(4, 0)] = dt * (u[0] + u[1]);
        g[(5, 1)] = dt * (u[0] - u[1]);
        g
    });
    let output = Arc::new(|x: &DVector<f64>, _u: &DVector<f64>, _th: &DVector<f64>| {
        DVector::from_column_slice(&[x[0], x[1]])
    });
    let jac = Arc::new(move |x: &DVector<f64>, u: &DVector<f64>, th: &DVector<f64>| {
        let (phi, v1, v2, phidot) = (x[2], x[3], x[4], x[5]);
        let (s, c) = phi.sin_cos();
        let mut fx = DMatrix::<f64>::zeros(6, 6);
        fx[(0, 2)] = -v1 * s - v2 * c;
        fx[(0, 3)] = c;
        fx[(0, 4)] = -s;
        fx[(1, 2)] = v1 * c - v2 * s;
        fx[(1, 3)] = s;
        fx[(1, 4)] = c;
        fx[(2, 5)] = 1.0;
        fx[(3, 2)] = -GRAVITY * c;
        fx[(3, 4)] = phidot;
        fx[(3, 5)] = v2;
        fx[(4, 2)] = GRAVITY * s;
        fx[(4, 3)] = -phidot;
        fx[(4, 5)] = -v1;
        let mut fu = DMatrix::<f64>::zeros(6, 2);
        fu[(4, 0)] = th[0];
        fu[(4, 1)] = th[0];
        fu[(5, 0)] = th[1];
        fu[(5, 1)] = -th[1];
        (DMatrix::identity(6, 6) + fx * dt, fu * dt)
    });
    let out_jac = Arc::new(|_x: &DVector<f64>, _u: &DVector<f64>, _th: &DVector<f64>| {
        let mut c = DMatrix::zeros(2, 6);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        (c, DMatrix::zeros(2, 2))
    });

    let model = ParametricModel::new(dims, f, regressor, output)
        .with_jacobians(jac)
        .with_output_jacobians(out_jac);

    let theta_true = DVector::from_column_slice(&[p.theta1, p.theta2]);
    let theta_hat0 = &theta_true * p.estimate_factor;
    let lo = DVector::from_fn(2, |i, _| theta_true[i].min(theta_hat0[i]) * 0.5);
    let hi = DVector::from_fn(2, |i, _| theta_true[i].max(theta_hat0[i]) * 1.5);
    let theta_set = ParameterSet::Box { lo, hi };

    // Rows: p2 corridor, |phi|, |v1|, |v2| -> r = 8.
    let mut d_mat = DMatrix::<f64>::zeros(8, 6);
    let mut d_vec = DVector::<f64>::zeros(8);
    let bounds = [(1usize, p.corridor), (2, p.phi_max), (3, p.v_max), (4, p.v_max)];
    for (row, (idx, b)) in bounds.iter().enumerate() {
        d_mat[(2 * row, *idx)] = 1.0;
        d_vec[2 * row] = *b;
        d_mat[(2 * row + 1, *idx)] = -1.0;
        d_vec[2 * row + 1] = *b;
    }
    let constraints = ConstraintSpec {
        u_lo: DVector::from_element(2, p.u_lo),
        u_hi: DVector::from_element(2, p.u_hi),
        d_mat,
        d_vec,
        slack_weights: DVector::from_element(8, p.q_xi),
        u_margin: p.u_margin,
    };

    Ok(QuadBundle { model, theta_set, theta_true, theta_hat0, constraints, dt: p.dt })
}

/// Stock weights for the quadrotor benchmark (N=5, M=10 horizons).
pub fn quad_weights(n: usize, m: usize, omega: f64) -> CostWeights {
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[
        10.0, 10.0, 1.0, 0.1, 0.1, 0.1,
    ]));
    let r = DMatrix::identity(2, 2) * 0.1;
    CostWeights { q, r, omega, n, m }
}

/// Hover state at a position with zero attitude and velocity.
pub fn hover_state(p1: f64, p2: f64) -> DVector<f64> {
    DVector::from_column_slice(&[p1, p2, 0.0, 0.0, 0.0, 0.0])
}

pub fn hover_input(theta: &DVector<f64>) -> DVector<f64> {
    DVector::from_element(2, GRAVITY / (2.0 * theta[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_is_stationary() {
        let bundle = build_quadrotor(&QuadParams::default()).unwrap();
        let x = hover_state(1.0, 0.2);
        let u = hover_input(&bundle.theta_true);
        let res = crate::model::steady_state_residual(&bundle.model, &bundle.theta_true, &x, &u);
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn regressor_identity_is_exact() {
        let bundle = build_quadrotor(&QuadParams::default()).unwrap();
        let mut s = 99u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..200 {
            let x = DVector::from_fn(6, |_, _| 2.0 * next());
            let u = DVector::from_fn(2, |_, _| 2.0 * next());
            let th = DVector::from_fn(2, |_, _| 10.0 * next().abs() + 0.1);
            let w = DVector::from_element(1, 0.3 * next());
            let lhs = bundle.model.eval_f(&x, &u, &th, &w);
            let rhs = bundle.model.eval_f(&x, &u, &DVector::zeros(2), &w)
                + bundle.model.eval_g(&x, &u, &w) * th;
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let bundle = build_quadrotor(&QuadParams::default()).unwrap();
        let mut s = 5u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..100 {
            let x = DVector::from_fn(6, |_, _| next());
            let u = DVector::from_fn(2, |_, _| 1.5 * next() + 1.5);
            let (a, b) = bundle.model.jacobians(&x, &u, &bundle.theta_true);
            let (a_fd, b_fd) = bundle.model.jacobians_fd(&x, &u, &bundle.theta_true);
            let rel_a = (&a - &a_fd).amax() / (1.0 + a.amax());
            let rel_b = (&b - &b_fd).amax() / (1.0 + b.amax());
            assert!(rel_a < 1e-4, "A mismatch {rel_a}");
            assert!(rel_b < 1e-4, "B mismatch {rel_b}");
        }
    }

    #[test]
    fn default_estimate_deviates_by_factor_two() {
        let bundle = build_quadrotor(&QuadParams::default()).unwrap();
        for i in 0..2 {
            assert!((bundle.theta_hat0[i] / bundle.theta_true[i] - 2.0).abs() < 1e-12);
        }
        assert!(bundle.theta_set.contains(&bundle.theta_true, 0.0));
        assert!(bundle.theta_set.contains(&bundle.theta_hat0, 0.0));
    }
}
