//! Optimal-setpoint computation: minimize the weighted output offset over
//! the steady-state manifold (a QP for linear models, a small Gauss-Newton
//! iteration otherwise).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::weighted_norm_sq;
use crate::model::{steady_state_residual, ConstraintSpec, ParametricModel, Setpoint, TrackingTarget};
use crate::qp::{solve_qp, QpProblem};

use super::TIE_BREAK;

/// Feasibility tolerance for the steady-state equations at the optimum.
pub const SETPOINT_FEAS_TOL: f64 = 1e-8;

/// argmin_{(x,u,y) in S(theta)} ||y_d - y||_T^2.
///
/// The manifold keeps x in the (hard) state polytope and u in the input
/// box; pass a margined constraint set for the regional variant.
pub fn optimal_setpoint(
    model: &ParametricModel,
    theta: &DVector<f64>,
    target: &TrackingTarget,
    constraints: &ConstraintSpec,
) -> Result<Setpoint> {
    if model.linear_form().is_some() {
        setpoint_linear(model, theta, target, constraints)
    } else {
        setpoint_gauss_newton(model, theta, target, constraints)
    }
}

fn setpoint_linear(
    model: &ParametricModel,
    theta: &DVector<f64>,
    target: &TrackingTarget,
    constraints: &ConstraintSpec,
) -> Result<Setpoint> {
    let dims = model.dims();
    let lm = model.linear_at(theta).expect("checked by caller");
    let n = dims.n_x + dims.n_u + dims.n_y;
    let (ox, ou, oy) = (0, dims.n_x, dims.n_x + dims.n_u);

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for i in 0..dims.n_y {
        for j in 0..dims.n_y {
            h[(oy + i, oy + j)] += 2.0 * target.t[(i, j)];
        }
        g[oy + i] -= 2.0 * target.t.row(i).transpose().dot(&target.y_d);
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * TIE_BREAK;
    }
    // Reference: origin state, mid-box input, target output.
    let mid = constraints.mid_input();
    for j in 0..dims.n_u {
        g[ou + j] -= 2.0 * TIE_BREAK * mid[j];
    }
    for j in 0..dims.n_y {
        g[oy + j] -= 2.0 * TIE_BREAK * target.y_d[j];
    }

    let n_eq = dims.n_x + dims.n_y;
    let mut a_eq = DMatrix::<f64>::zeros(n_eq, n);
    let mut b_eq = DVector::<f64>::zeros(n_eq);
    for i in 0..dims.n_x {
        for j in 0..dims.n_x {
            a_eq[(i, ox + j)] = lm.a[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        for j in 0..dims.n_u {
            a_eq[(i, ou + j)] = lm.b[(i, j)];
        }
        b_eq[i] = -lm.e_off[i];
    }
    for i in 0..dims.n_y {
        let row = dims.n_x + i;
        for j in 0..dims.n_x {
            a_eq[(row, ox + j)] = lm.c[(i, j)];
        }
        for j in 0..dims.n_u {
            a_eq[(row, ou + j)] = lm.d[(i, j)];
        }
        a_eq[(row, oy + i)] = -1.0;
        b_eq[row] = -lm.f_off[i];
    }

    let r = constraints.n_rows();
    let mut g_in = DMatrix::<f64>::zeros(r, n);
    let mut h_in = DVector::<f64>::zeros(r);
    for i in 0..r {
        for j in 0..dims.n_x {
            g_in[(i, ox + j)] = constraints.d_mat[(i, j)];
        }
        h_in[i] = constraints.d_vec[i];
    }

    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    let (u_lo, u_hi) = constraints.u_bounds_margined();
    for j in 0..dims.n_u {
        lb[ou + j] = u_lo[j];
        ub[ou + j] = u_hi[j];
    }

    let sol = solve_qp(&QpProblem { h, g, a_eq, b_eq, g_in, h_in, lb, ub, max_iter: 0 })?;
    if sol.kkt_residual > 1e-6 {
        return Err(Error::SetpointNonConvergence {
            stationarity: sol.kkt_residual,
            steady_state: f64::NAN,
        });
    }
    let sp = Setpoint {
        x: DVector::from_fn(dims.n_x, |j, _| sol.z[ox + j]),
        u: DVector::from_fn(dims.n_u, |j, _| sol.z[ou + j]),
        y: DVector::from_fn(dims.n_y, |j, _| sol.z[oy + j]),
    };
    debug_assert!(steady_state_residual(model, theta, &sp.x, &sp.u) <= SETPOINT_FEAS_TOL);
    Ok(sp)
}

fn setpoint_gauss_newton(
    model: &ParametricModel,
    theta: &DVector<f64>,
    target: &TrackingTarget,
    constraints: &ConstraintSpec,
) -> Result<Setpoint> {
    let dims = model.dims();
    let n = dims.n_x + dims.n_u + dims.n_y;
    let (ox, ou, oy) = (0, dims.n_x, dims.n_x + dims.n_u);
    let w0 = DVector::zeros(dims.n_w);

    // Start from the origin state and the mid-box input.
    let mut z = DVector::<f64>::zeros(n);
    let mid = constraints.mid_input();
    for j in 0..dims.n_u {
        z[ou + j] = mid[j];
    }
    let h0 = model.eval_h(&DVector::zeros(dims.n_x), &mid, theta);
    for j in 0..dims.n_y {
        z[oy + j] = h0[j];
    }
    let z_ref = z.clone();

    let eval_c = |z: &DVector<f64>| -> DVector<f64> {
        let x = DVector::from_fn(dims.n_x, |j, _| z[ox + j]);
        let u = DVector::from_fn(dims.n_u, |j, _| z[ou + j]);
        let y = DVector::from_fn(dims.n_y, |j, _| z[oy + j]);
        let mut c = DVector::zeros(dims.n_x + dims.n_y);
        c.rows_mut(0, dims.n_x).copy_from(&(model.eval_f(&x, &u, theta, &w0) - &x));
        c.rows_mut(dims.n_x, dims.n_y).copy_from(&(model.eval_h(&x, &u, theta) - &y));
        c
    };
    let objective = |z: &DVector<f64>| -> f64 {
        let y = DVector::from_fn(dims.n_y, |j, _| z[oy + j]);
        weighted_norm_sq(&(&y - &target.y_d), &target.t) + TIE_BREAK * (z - &z_ref).norm_squared()
    };

    let mut lambda = 1e-6;
    let mut nu: f64 = 1.0;
    let mut last_c = f64::INFINITY;
    let mut last_step = f64::INFINITY;
    for _ in 0..50 {
        let x = DVector::from_fn(dims.n_x, |j, _| z[ox + j]);
        let u = DVector::from_fn(dims.n_u, |j, _| z[ou + j]);
        let c_res = eval_c(&z);
        let (a_s, b_s) = model.jacobians(&x, &u, theta);
        let (c_s, d_s) = model.output_jacobians(&x, &u, theta);

        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for i in 0..dims.n_y {
            for j in 0..dims.n_y {
                h[(oy + i, oy + j)] += 2.0 * target.t[(i, j)];
            }
        }
        let y = DVector::from_fn(dims.n_y, |j, _| z[oy + j]);
        let grad_y = 2.0 * &target.t * (&y - &target.y_d);
        for j in 0..dims.n_y {
            g[oy + j] += grad_y[j];
        }
        for i in 0..n {
            h[(i, i)] += 2.0 * (TIE_BREAK + lambda);
            g[i] += 2.0 * TIE_BREAK * (z[i] - z_ref[i]);
        }

        let n_eq = dims.n_x + dims.n_y;
        let mut a_eq = DMatrix::<f64>::zeros(n_eq, n);
        for i in 0..dims.n_x {
            for j in 0..dims.n_x {
                a_eq[(i, ox + j)] = a_s[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            for j in 0..dims.n_u {
                a_eq[(i, ou + j)] = b_s[(i, j)];
            }
        }
        for i in 0..dims.n_y {
            let row = dims.n_x + i;
            for j in 0..dims.n_x {
                a_eq[(row, ox + j)] = c_s[(i, j)];
            }
            for j in 0..dims.n_u {
                a_eq[(row, ou + j)] = d_s[(i, j)];
            }
            a_eq[(row, oy + i)] = -1.0;
        }
        let b_eq = -&c_res;

        let r = constraints.n_rows();
        let mut g_in = DMatrix::<f64>::zeros(r, n);
        let mut h_in = DVector::<f64>::zeros(r);
        for i in 0..r {
            for j in 0..dims.n_x {
                g_in[(i, ox + j)] = constraints.d_mat[(i, j)];
            }
            h_in[i] = constraints.d_vec[i]
                - constraints.d_mat.row(i).transpose().dot(&x);
        }

        let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(n, f64::INFINITY);
        let (u_lo, u_hi) = constraints.u_bounds_margined();
        for j in 0..dims.n_u {
            lb[ou + j] = u_lo[j] - z[ou + j];
            ub[ou + j] = u_hi[j] - z[ou + j];
        }

        let qp = solve_qp(&QpProblem { h, g, a_eq, b_eq, g_in, h_in, lb, ub, max_iter: 0 })?;
        let dz = DVector::from_fn(n, |i, _| qp.z[i]);
        nu = nu.max(2.0 * qp.eq_duals.amax() + 0.1);
        last_c = c_res.amax();
        last_step = dz.amax();
        if last_c <= 1e-10 && last_step <= 1e-10 * (1.0 + z.amax()) {
            break;
        }

        let merit_now = objective(&z) + nu * c_res.lp_norm(1);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let z_try = &z + &dz * t;
            let merit_try = objective(&z_try) + nu * eval_c(&z_try).lp_norm(1);
            if merit_try < merit_now {
                z = z_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if accepted {
            lambda = (lambda / 10.0).max(1e-9);
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }

    let sp = Setpoint {
        x: DVector::from_fn(dims.n_x, |j, _| z[ox + j]),
        u: DVector::from_fn(dims.n_u, |j, _| z[ou + j]),
        y: DVector::from_fn(dims.n_y, |j, _| z[oy + j]),
    };
    let ss = steady_state_residual(model, theta, &sp.x, &sp.u);
    if ss > SETPOINT_FEAS_TOL || last_c > 1e-6 {
        return Err(Error::SetpointNonConvergence { stationarity: last_step, steady_state: ss });
    }
    Ok(sp)
}
