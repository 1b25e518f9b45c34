//! Condensed QP transcription for linear models.
//!
//! States are eliminated through the affine dynamics, so the decision
//! vector is `[u_0..u_{N-1}, x_s, u_s, y_s, slacks]`. Constraint-violation
//! slacks enter as explicit nonnegative variables with quadratic penalty;
//! at the optimum they equal the max-expression used by the cost module.

use nalgebra::{DMatrix, DVector};

use crate::cost::TailPolicy;
use crate::error::{Error, Result};
use crate::model::Setpoint;
use crate::qp::{solve_qp, QpProblem};

use super::{
    cold_reference, evaluate_solution_cost, warm_reference, Layout, MpcProblem, MpcSolution,
    SolveStats, TIE_BREAK,
};

/// Affine map x_k = m z_core + c over the core decision variables.
struct AffineState {
    m: DMatrix<f64>,
    c: DVector<f64>,
}

pub fn solve_linear(p: &MpcProblem<'_>) -> Result<MpcSolution> {
    let dims = p.model.dims();
    let lm = p
        .model
        .linear_at(&p.theta_hat)
        .ok_or_else(|| Error::Config("linear path requires a linear form".into()))?;
    let layout = Layout::new(p.weights.n, p.weights.m, dims.n_x, dims.n_u, dims.n_y, p.constraints.n_rows());
    let n_core = layout.n_core();
    let n_total = n_core + layout.n_slack();

    let gain = match &p.tail {
        TailPolicy::ConstantInput => None,
        TailPolicy::LinearFeedback { gain } => Some(gain.clone()),
    };

    // Forward affine maps for every costed state.
    let steps = layout.n + layout.m;
    let mut states: Vec<AffineState> = Vec::with_capacity(steps + 1);
    states.push(AffineState { m: DMatrix::zeros(dims.n_x, n_core), c: p.x_hat.clone() });
    let mut e_us = DMatrix::zeros(dims.n_u, n_core);
    for (j, col) in layout.us().enumerate() {
        e_us[(j, col)] = 1.0;
    }
    let mut e_xs = DMatrix::zeros(dims.n_x, n_core);
    for (j, col) in layout.xs().enumerate() {
        e_xs[(j, col)] = 1.0;
    }
    for k in 0..steps {
        let prev = states.last().unwrap();
        let (mut m_next, mut c_next) = (&lm.a * &prev.m, &lm.a * &prev.c + &lm.e_off);
        if k < layout.n {
            // Stage input u_k is a decision block.
            for (j, col) in layout.u(k).enumerate() {
                for i in 0..dims.n_x {
                    m_next[(i, col)] += lm.b[(i, j)];
                }
            }
        } else {
            // Tail input: u_s, plus K (x - x_s) under a feedback tail.
            let mut u_map = e_us.clone();
            if let Some(k_gain) = &gain {
                u_map += k_gain * (&prev.m - &e_xs);
                c_next += &lm.b * (k_gain * &prev.c);
            }
            m_next += &lm.b * &u_map;
        }
        states.push(AffineState { m: m_next, c: c_next });
    }

    // Quadratic objective 1/2 z'Hz + g'z (+ constant, dropped).
    let mut h = DMatrix::<f64>::zeros(n_total, n_total);
    let mut g = DVector::<f64>::zeros(n_total);
    let add_quad = |h: &mut DMatrix<f64>,
                        g: &mut DVector<f64>,
                        w: &DMatrix<f64>,
                        w0: &DVector<f64>,
                        pmat: &DMatrix<f64>,
                        scale: f64| {
        let pw = pmat * w;
        let block = 2.0 * scale * w.transpose() * &pw;
        for i in 0..n_core {
            for j in 0..n_core {
                h[(i, j)] += block[(i, j)];
            }
        }
        let gv = 2.0 * scale * (pw.transpose() * w0);
        for i in 0..n_core {
            g[i] += gv[i];
        }
    };

    for k in 0..steps {
        let scale = if k < layout.n { 1.0 } else { p.weights.omega };
        let dev_m = &states[k].m - &e_xs;
        add_quad(&mut h, &mut g, &dev_m, &states[k].c, &p.weights.q, scale);
        if k < layout.n {
            let mut u_m = DMatrix::zeros(dims.n_u, n_core);
            for (j, col) in layout.u(k).enumerate() {
                u_m[(j, col)] = 1.0;
            }
            u_m -= &e_us;
            add_quad(&mut h, &mut g, &u_m, &DVector::zeros(dims.n_u), &p.weights.r, scale);
        } else if let Some(k_gain) = &gain {
            let u_m = k_gain * (&states[k].m - &e_xs);
            let u_c = k_gain * &states[k].c;
            add_quad(&mut h, &mut g, &u_m, &u_c, &p.weights.r, scale);
        }
        // Slack penalties (diagonal block).
        for i in 0..layout.r {
            let col = layout.slack(k, i);
            h[(col, col)] += 2.0 * scale * p.constraints.slack_weights[i];
        }
    }
    // Output offset ||y_s - y_d||_T^2.
    let mut y_m = DMatrix::zeros(dims.n_y, n_core);
    for (j, col) in layout.ys().enumerate() {
        y_m[(j, col)] = 1.0;
    }
    add_quad(&mut h, &mut g, &y_m, &(-&p.target.y_d), &p.target.t, 1.0);

    // Tie-break regularization toward the (shifted) reference.
    let z_ref_core = match p.warm_start {
        Some(prev) => warm_reference(prev, &layout),
        None => cold_reference(p, &layout),
    };
    for i in 0..n_total {
        h[(i, i)] += 2.0 * TIE_BREAK;
    }
    for i in 0..n_core {
        g[i] -= 2.0 * TIE_BREAK * z_ref_core[i];
    }

    // Steady-state equalities: (A - I) x_s + B u_s = -e_off,
    // C x_s + D u_s - y_s = -f_off.
    let n_eq = dims.n_x + dims.n_y;
    let mut a_eq = DMatrix::<f64>::zeros(n_eq, n_total);
    let mut b_eq = DVector::<f64>::zeros(n_eq);
    for i in 0..dims.n_x {
        for (j, col) in layout.xs().enumerate() {
            a_eq[(i, col)] = lm.a[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        for (j, col) in layout.us().enumerate() {
            a_eq[(i, col)] = lm.b[(i, j)];
        }
        b_eq[i] = -lm.e_off[i];
    }
    for i in 0..dims.n_y {
        let row = dims.n_x + i;
        for (j, col) in layout.xs().enumerate() {
            a_eq[(row, col)] = lm.c[(i, j)];
        }
        for (j, col) in layout.us().enumerate() {
            a_eq[(row, col)] = lm.d[(i, j)];
        }
        a_eq[(row, layout.ys().start + i)] = -1.0;
        b_eq[row] = -lm.f_off[i];
    }

    // Inequalities: slack coupling rows D_i x_k - xi <= d_i, plus the hard
    // setpoint rows D x_s <= d.
    let n_in = steps * layout.r + layout.r;
    let mut g_in = DMatrix::<f64>::zeros(n_in, n_total);
    let mut h_in = DVector::<f64>::zeros(n_in);
    let mut row = 0;
    for k in 0..steps {
        for i in 0..layout.r {
            let d_row = p.constraints.d_mat.row(i);
            let coupled = d_row * &states[k].m;
            for c in 0..n_core {
                g_in[(row, c)] = coupled[(0, c)];
            }
            g_in[(row, layout.slack(k, i))] = -1.0;
            h_in[row] = p.constraints.d_vec[i] - (d_row * &states[k].c)[0];
            row += 1;
        }
    }
    for i in 0..layout.r {
        for (j, col) in layout.xs().enumerate() {
            g_in[(row, col)] = p.constraints.d_mat[(i, j)];
        }
        h_in[row] = p.constraints.d_vec[i];
        row += 1;
    }

    // Bounds.
    let mut lb = DVector::from_element(n_total, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n_total, f64::INFINITY);
    for k in 0..layout.n {
        for (j, col) in layout.u(k).enumerate() {
            lb[col] = p.constraints.u_lo[j];
            ub[col] = p.constraints.u_hi[j];
        }
    }
    let (us_lo, us_hi) = p.constraints.u_bounds_margined();
    for (j, col) in layout.us().enumerate() {
        lb[col] = us_lo[j];
        ub[col] = us_hi[j];
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
    let sol = solve_qp(&qp)?;

    let u_star: Vec<DVector<f64>> = (0..layout.n)
        .map(|k| DVector::from_fn(dims.n_u, |j, _| sol.z[layout.u(k).start + j]))
        .collect();
    let setpoint = Setpoint {
        x: DVector::from_fn(dims.n_x, |j, _| sol.z[layout.xs().start + j]),
        u: DVector::from_fn(dims.n_u, |j, _| sol.z[layout.us().start + j]),
        y: DVector::from_fn(dims.n_y, |j, _| sol.z[layout.ys().start + j]),
    };
    let slacks: Vec<DVector<f64>> = (0..steps)
        .map(|k| DVector::from_fn(layout.r, |i, _| sol.z[layout.slack(k, i)]))
        .collect();

    let mut out = MpcSolution {
        u_star,
        setpoint,
        slacks,
        j_star: 0.0,
        stats: SolveStats {
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            solve_time_ms: 0.0,
            converged: sol.converged,
        },
    };
    out.j_star = evaluate_solution_cost(p, &out)?;
    if p.options.verbose {
        eprintln!(
            "qp: iter={} kkt={:.3e} J*={:.6e}",
            out.stats.iterations, out.stats.kkt_residual, out.j_star
        );
    }
    Ok(out)
}
