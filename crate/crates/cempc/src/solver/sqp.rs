//! Single-shooting Gauss-Newton SQP for nonlinear models.
//!
//! The decision vector is the core layout (inputs + setpoint); states are
//! eliminated by forward simulation and differentiated with the chain
//! rule, including through the feedback-tail rollout. Each subproblem is
//! a strictly convex QP with explicit violation slacks; steps are globally
//! safeguarded with an l1 merit function and Levenberg damping.

use nalgebra::{DMatrix, DVector};

use crate::cost::TailPolicy;
use crate::error::Result;
use crate::linalg::weighted_norm_sq;
use crate::model::Setpoint;
use crate::qp::{solve_qp, QpProblem};

use super::{
    cold_reference, evaluate_solution_cost, warm_reference, Layout, MpcProblem, MpcSolution,
    SolveStats, TIE_BREAK,
};

const LAMBDA_MIN: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e6;

struct Trajectory {
    /// Costed states x_0..x_{N+M-1} plus the uncosted final state.
    states: Vec<DVector<f64>>,
    /// d x_k / d z for each stored state.
    sens: Vec<DMatrix<f64>>,
    /// Tail inputs (after clipping) and their Jacobians.
    tail_inputs: Vec<DVector<f64>>,
    tail_sens: Vec<DMatrix<f64>>,
}

fn split_inputs(z: &DVector<f64>, layout: &Layout) -> Vec<DVector<f64>> {
    (0..layout.n)
        .map(|k| DVector::from_fn(layout.n_u, |j, _| z[layout.u(k).start + j]))
        .collect()
}

fn setpoint_of(z: &DVector<f64>, layout: &Layout) -> Setpoint {
    Setpoint {
        x: DVector::from_fn(layout.n_x, |j, _| z[layout.xs().start + j]),
        u: DVector::from_fn(layout.n_u, |j, _| z[layout.us().start + j]),
        y: DVector::from_fn(layout.n_y, |j, _| z[layout.ys().start + j]),
    }
}

fn selector(rows: std::ops::Range<usize>, n_core: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(rows.len(), n_core);
    for (i, col) in rows.enumerate() {
        e[(i, col)] = 1.0;
    }
    e
}

fn rollout_with_sens(p: &MpcProblem<'_>, layout: &Layout, z: &DVector<f64>) -> Trajectory {
    let dims = p.model.dims();
    let n_core = layout.n_core();
    let w0 = DVector::zeros(dims.n_w);
    let sp = setpoint_of(z, layout);
    let inputs = split_inputs(z, layout);
    let e_xs = selector(layout.xs(), n_core);
    let e_us = selector(layout.us(), n_core);

    let steps = layout.n + layout.m;
    let mut states = Vec::with_capacity(steps + 1);
    let mut sens = Vec::with_capacity(steps + 1);
    let mut tail_inputs = Vec::with_capacity(layout.m);
    let mut tail_sens = Vec::with_capacity(layout.m);

    states.push(p.x_hat.clone());
    sens.push(DMatrix::zeros(dims.n_x, n_core));
    for k in 0..steps {
        let x = states[k].clone();
        let xs_k = sens[k].clone();
        let (u, u_sens) = if k < layout.n {
            (inputs[k].clone(), selector(layout.u(k), n_core))
        } else {
            match &p.tail {
                TailPolicy::ConstantInput => (sp.u.clone(), e_us.clone()),
                TailPolicy::LinearFeedback { gain } => {
                    let raw = &sp.u + gain * (&x - &sp.x);
                    let clipped = p.constraints.clip_input(&raw);
                    let mut m = &e_us + gain * (&xs_k - &e_xs);
                    // clamp derivative: zero rows where saturated
                    for j in 0..dims.n_u {
                        if raw[j] <= p.constraints.u_lo[j] || raw[j] >= p.constraints.u_hi[j] {
                            for c in 0..n_core {
                                m[(j, c)] = 0.0;
                            }
                        }
                    }
                    (clipped, m)
                }
            }
        };
        let (a_k, b_k) = p.model.jacobians(&x, &u, &p.theta_hat);
        let next = p.model.eval_f(&x, &u, &p.theta_hat, &w0);
        let next_sens = &a_k * &xs_k + &b_k * &u_sens;
        if k >= layout.n {
            tail_inputs.push(u);
            tail_sens.push(u_sens);
        }
        states.push(next);
        sens.push(next_sens);
    }
    Trajectory { states, sens, tail_inputs, tail_sens }
}

/// Steady-state constraint c(z) = [f(x_s,u_s,th,0) - x_s; h(x_s,u_s,th) - y_s]
/// and its Jacobian over the core variables.
fn steady_state_residuals(
    p: &MpcProblem<'_>,
    layout: &Layout,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let dims = p.model.dims();
    let n_core = layout.n_core();
    let sp = setpoint_of(z, layout);
    let w0 = DVector::zeros(dims.n_w);
    let c1 = p.model.eval_f(&sp.x, &sp.u, &p.theta_hat, &w0) - &sp.x;
    let c2 = p.model.eval_h(&sp.x, &sp.u, &p.theta_hat) - &sp.y;
    let mut c = DVector::zeros(dims.n_x + dims.n_y);
    c.rows_mut(0, dims.n_x).copy_from(&c1);
    c.rows_mut(dims.n_x, dims.n_y).copy_from(&c2);

    let (a_s, b_s) = p.model.jacobians(&sp.x, &sp.u, &p.theta_hat);
    let (c_s, d_s) = p.model.output_jacobians(&sp.x, &sp.u, &p.theta_hat);
    let mut jac = DMatrix::zeros(dims.n_x + dims.n_y, n_core);
    for i in 0..dims.n_x {
        for (j, col) in layout.xs().enumerate() {
            jac[(i, col)] = a_s[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        for (j, col) in layout.us().enumerate() {
            jac[(i, col)] = b_s[(i, j)];
        }
    }
    for i in 0..dims.n_y {
        let row = dims.n_x + i;
        for (j, col) in layout.xs().enumerate() {
            jac[(row, col)] = c_s[(i, j)];
        }
        for (j, col) in layout.us().enumerate() {
            jac[(row, col)] = d_s[(i, j)];
        }
        jac[(row, layout.ys().start + i)] = -1.0;
    }
    (c, jac)
}

/// Full objective (cost module value + output offset + tie-break term).
fn objective(p: &MpcProblem<'_>, layout: &Layout, z: &DVector<f64>, z_ref: &DVector<f64>) -> f64 {
    let sp = setpoint_of(z, layout);
    let inputs = split_inputs(z, layout);
    let open = crate::cost::open_loop_cost(
        p.model,
        &p.x_hat,
        &p.theta_hat,
        &inputs,
        &sp.x,
        &sp.u,
        &p.weights,
        &p.tail,
        &p.constraints,
    )
    .expect("dimensions fixed by layout");
    let offset = weighted_norm_sq(&(&sp.y - &p.target.y_d), &p.target.t);
    open + offset + TIE_BREAK * (z - z_ref).norm_squared()
}

pub fn solve_nonlinear(p: &MpcProblem<'_>) -> Result<MpcSolution> {
    let dims = p.model.dims();
    let layout =
        Layout::new(p.weights.n, p.weights.m, dims.n_x, dims.n_u, dims.n_y, p.constraints.n_rows());
    let n_core = layout.n_core();
    let n_total = n_core + layout.n_slack();
    let e_xs = selector(layout.xs(), n_core);
    let e_us = selector(layout.us(), n_core);
    let e_ys = selector(layout.ys(), n_core);

    let z_ref = match p.warm_start {
        Some(prev) => warm_reference(prev, &layout),
        None => cold_reference(p, &layout),
    };
    let mut z = z_ref.clone();
    let mut lambda = LAMBDA_MIN;
    let mut nu: f64 = 1.0;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut kkt = f64::INFINITY;

    while iterations < p.options.sqp_max_iter {
        iterations += 1;
        let traj = rollout_with_sens(p, &layout, &z);
        let (c_res, c_jac) = steady_state_residuals(p, &layout, &z);

        // Gauss-Newton data over [dz; xi].
        let mut h = DMatrix::<f64>::zeros(n_total, n_total);
        let mut g = DVector::<f64>::zeros(n_total);
        let add_term = |h: &mut DMatrix<f64>,
                            g: &mut DVector<f64>,
                            w: &DMatrix<f64>,
                            r0: &DVector<f64>,
                            pmat: &DMatrix<f64>,
                            scale: f64| {
            let pw = pmat * w;
            let block = 2.0 * scale * w.transpose() * &pw;
            for i in 0..n_core {
                for j in 0..n_core {
                    h[(i, j)] += block[(i, j)];
                }
            }
            let gv = 2.0 * scale * (pw.transpose() * r0);
            for i in 0..n_core {
                g[i] += gv[i];
            }
        };

        let sp = setpoint_of(&z, &layout);
        let inputs = split_inputs(&z, &layout);
        let steps = layout.n + layout.m;
        for k in 0..steps {
            let scale = if k < layout.n { 1.0 } else { p.weights.omega };
            let w = &traj.sens[k] - &e_xs;
            let r0 = &traj.states[k] - &sp.x;
            add_term(&mut h, &mut g, &w, &r0, &p.weights.q, scale);
            if k < layout.n {
                let w_u = selector(layout.u(k), n_core) - &e_us;
                let r_u = &inputs[k] - &sp.u;
                add_term(&mut h, &mut g, &w_u, &r_u, &p.weights.r, scale);
            } else if p.tail.is_feedback() {
                let j = k - layout.n;
                let w_u = &traj.tail_sens[j] - &e_us;
                let r_u = &traj.tail_inputs[j] - &sp.u;
                add_term(&mut h, &mut g, &w_u, &r_u, &p.weights.r, scale);
            }
            for i in 0..layout.r {
                let col = layout.slack(k, i);
                h[(col, col)] += 2.0 * scale * p.constraints.slack_weights[i];
            }
        }
        let r_y = &sp.y - &p.target.y_d;
        add_term(&mut h, &mut g, &e_ys, &r_y, &p.target.t, 1.0);
        for i in 0..n_core {
            h[(i, i)] += 2.0 * (TIE_BREAK + lambda);
            g[i] += 2.0 * TIE_BREAK * (z[i] - z_ref[i]);
        }

        // Equality block and inequality rows.
        let n_eq = dims.n_x + dims.n_y;
        let mut a_eq = DMatrix::<f64>::zeros(n_eq, n_total);
        for i in 0..n_eq {
            for j in 0..n_core {
                a_eq[(i, j)] = c_jac[(i, j)];
            }
        }
        let b_eq = -&c_res;

        let n_in = steps * layout.r + layout.r;
        let mut g_in = DMatrix::<f64>::zeros(n_in, n_total);
        let mut h_in = DVector::<f64>::zeros(n_in);
        let mut row = 0;
        for k in 0..steps {
            for i in 0..layout.r {
                let d_row = p.constraints.d_mat.row(i);
                let coupled = d_row * &traj.sens[k];
                for c in 0..n_core {
                    g_in[(row, c)] = coupled[(0, c)];
                }
                g_in[(row, layout.slack(k, i))] = -1.0;
                h_in[row] = p.constraints.d_vec[i] - (d_row * &traj.states[k])[0];
                row += 1;
            }
        }
        for i in 0..layout.r {
            for (j, col) in layout.xs().enumerate() {
                g_in[(row, col)] = p.constraints.d_mat[(i, j)];
            }
            // Hard setpoint rows: D (x_s + dx_s) <= d.
            h_in[row] = p.constraints.d_vec[i]
                - p.constraints.d_mat.row(i).transpose().dot(&sp.x);
            row += 1;
        }

        let mut lb = DVector::from_element(n_total, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(n_total, f64::INFINITY);
        for k in 0..layout.n {
            for (j, col) in layout.u(k).enumerate() {
                lb[col] = p.constraints.u_lo[j] - z[col];
                ub[col] = p.constraints.u_hi[j] - z[col];
            }
        }
        let (us_lo, us_hi) = p.constraints.u_bounds_margined();
        for (j, col) in layout.us().enumerate() {
            lb[col] = us_lo[j] - z[col];
            ub[col] = us_hi[j] - z[col];
        }
        for s in n_core..n_total {
            lb[s] = 0.0;
        }

        let qp = QpProblem {
            h,
            g,
            a_eq,
            b_eq,
            g_in,
            h_in,
            lb,
            ub,
            max_iter: p.options.qp_iter_factor * n_total,
        };
        let qp_sol = solve_qp(&qp)?;
        let dz = DVector::from_fn(n_core, |i, _| qp_sol.z[i]);
        nu = nu.max(2.0 * qp_sol.eq_duals.amax() + 0.1);

        let c_norm = c_res.amax();
        let step_norm = dz.amax();
        kkt = c_norm.max(step_norm);
        if c_norm <= 1e-9 && step_norm <= 1e-9 * (1.0 + z.amax()) {
            converged = true;
            break;
        }

        // l1-merit backtracking line search.
        let merit_now = objective(p, &layout, &z, &z_ref) + nu * c_res.lp_norm(1);
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..12 {
            let z_try = &z + &dz * t;
            let (c_try, _) = steady_state_residuals(p, &layout, &z_try);
            let merit_try = objective(p, &layout, &z_try, &z_ref) + nu * c_try.lp_norm(1);
            if merit_try <= merit_now - 1e-4 * t * t * dz.norm_squared() * lambda.max(TIE_BREAK)
                && merit_try < merit_now + 1e-14 * merit_now.abs()
            {
                z = z_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if p.options.verbose {
            eprintln!(
                "sqp iter {iterations}: merit={merit_now:.6e} |c|={c_norm:.2e} |dz|={step_norm:.2e} lambda={lambda:.1e} t={t:.3} accepted={accepted}"
            );
        }
        if accepted {
            lambda = (lambda / 10.0).max(LAMBDA_MIN);
        } else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    let traj = rollout_with_sens(p, &layout, &z);
    let sp = setpoint_of(&z, &layout);
    let steps = layout.n + layout.m;
    let slacks: Vec<DVector<f64>> = (0..steps)
        .map(|k| {
            DVector::from_fn(layout.r, |i, _| {
                (p.constraints.d_mat.row(i).transpose().dot(&traj.states[k])
                    - p.constraints.d_vec[i])
                    .max(0.0)
            })
        })
        .collect();
    let mut out = MpcSolution {
        u_star: split_inputs(&z, &layout),
        setpoint: sp,
        slacks,
        j_star: 0.0,
        stats: SolveStats {
            iterations,
            kkt_residual: kkt,
            solve_time_ms: 0.0,
            converged,
        },
    };
    out.j_star = evaluate_solution_cost(p, &out)?;
    Ok(out)
}
