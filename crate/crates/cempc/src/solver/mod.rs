//! Tracking-MPC solver: joint optimization over the input sequence and the
//! artificial setpoint, with soft state constraints.
//!
//! Linear models condense into one strictly convex QP; nonlinear models go
//! through a single-shooting Gauss-Newton SQP whose subproblems reuse the
//! same QP kernel. Both paths share the decision-vector layout
//! `[u_0..u_{N-1}, x_s, u_s, y_s]` (slack variables are appended inside
//! the quadratic subproblems only).

pub mod linear;
pub mod setpoint;
pub mod sqp;

use std::ops::Range;
use std::time::Instant;

use nalgebra::DVector;

use crate::cost::{open_loop_cost, CostWeights, TailPolicy};
use crate::error::{Error, Result};
use crate::linalg::weighted_norm_sq;
use crate::model::{ConstraintSpec, ParametricModel, Setpoint, TrackingTarget};

/// Tie-break regularization toward the warm start; keeps every subproblem
/// strictly convex and the selected minimizer deterministic.
pub const TIE_BREAK: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// QP iteration cap as a multiple of the variable count.
    pub qp_iter_factor: usize,
    /// Major (Gauss-Newton) iteration cap.
    pub sqp_max_iter: usize,
    /// Emit per-iteration trace lines on stderr.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { qp_iter_factor: 10, sqp_max_iter: 50, verbose: false }
    }
}

#[derive(Debug, Clone)]
pub struct MpcProblem<'a> {
    pub model: &'a ParametricModel,
    pub theta_hat: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub weights: CostWeights,
    pub constraints: ConstraintSpec,
    pub target: TrackingTarget,
    pub tail: TailPolicy,
    pub warm_start: Option<&'a MpcSolution>,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time_ms: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub u_star: Vec<DVector<f64>>,
    pub setpoint: Setpoint,
    /// Violation slack per costed step (N stage + M tail), one entry per
    /// constraint row.
    pub slacks: Vec<DVector<f64>>,
    /// Optimal cost including the output-offset term.
    pub j_star: f64,
    pub stats: SolveStats,
}

/// Decision-vector layout shared by the QP and SQP transcriptions.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub r: usize,
}

impl Layout {
    pub fn new(n: usize, m: usize, n_x: usize, n_u: usize, n_y: usize, r: usize) -> Self {
        Self { n, m, n_x, n_u, n_y, r }
    }

    pub fn n_core(&self) -> usize {
        self.n * self.n_u + self.n_x + self.n_u + self.n_y
    }

    pub fn n_slack(&self) -> usize {
        (self.n + self.m) * self.r
    }

    pub fn u(&self, k: usize) -> Range<usize> {
        k * self.n_u..(k + 1) * self.n_u
    }

    pub fn xs(&self) -> Range<usize> {
        let o = self.n * self.n_u;
        o..o + self.n_x
    }

    pub fn us(&self) -> Range<usize> {
        let o = self.n * self.n_u + self.n_x;
        o..o + self.n_u
    }

    pub fn ys(&self) -> Range<usize> {
        let o = self.n * self.n_u + self.n_x + self.n_u;
        o..o + self.n_y
    }

    /// Column of slack (step, row) in the QP vector (after the core block).
    pub fn slack(&self, step: usize, row: usize) -> usize {
        self.n_core() + step * self.r + row
    }
}

/// Deterministic cold-start reference: mid-box inputs, current state as
/// setpoint guess, target as output guess.
pub fn cold_reference(p: &MpcProblem<'_>, layout: &Layout) -> DVector<f64> {
    let mut z = DVector::zeros(layout.n_core());
    let mid = p.constraints.mid_input();
    for k in 0..layout.n {
        z.rows_mut(layout.u(k).start, layout.n_u).copy_from(&mid);
    }
    z.rows_mut(layout.xs().start, layout.n_x).copy_from(&p.x_hat);
    z.rows_mut(layout.us().start, layout.n_u).copy_from(&mid);
    z.rows_mut(layout.ys().start, layout.n_y).copy_from(&p.target.y_d);
    z
}

/// Shift the previous solution one step for warm starting.
pub fn warm_reference(prev: &MpcSolution, layout: &Layout) -> DVector<f64> {
    let mut z = DVector::zeros(layout.n_core());
    for k in 0..layout.n {
        let src = if k + 1 < prev.u_star.len() { &prev.u_star[k + 1] } else { &prev.setpoint.u };
        z.rows_mut(layout.u(k).start, layout.n_u).copy_from(src);
    }
    z.rows_mut(layout.xs().start, layout.n_x).copy_from(&prev.setpoint.x);
    z.rows_mut(layout.us().start, layout.n_u).copy_from(&prev.setpoint.u);
    z.rows_mut(layout.ys().start, layout.n_y).copy_from(&prev.setpoint.y);
    z
}

/// Solve the tracking-MPC problem; dispatches on the model structure.
pub fn solve(problem: &MpcProblem<'_>) -> Result<MpcSolution> {
    let dims = problem.model.dims();
    if problem.x_hat.len() != dims.n_x || problem.theta_hat.len() != dims.n_theta {
        return Err(Error::Dimension("mpc problem state/parameter sizes".into()));
    }
    problem.weights.validate(dims.n_x, dims.n_u)?;
    problem.constraints.validate(dims.n_x, problem.constraints.u_margin > 0.0)?;
    let start = Instant::now();
    let mut sol = if problem.model.linear_form().is_some() {
        linear::solve_linear(problem)?
    } else {
        sqp::solve_nonlinear(problem)?
    };
    sol.stats.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(sol)
}

/// Re-evaluate a solution's cost through the cost module (used both for
/// reporting and for the re-evaluation consistency tests).
pub fn evaluate_solution_cost(p: &MpcProblem<'_>, sol: &MpcSolution) -> Result<f64> {
    let open = open_loop_cost(
        p.model,
        &p.x_hat,
        &p.theta_hat,
        &sol.u_star,
        &sol.setpoint.x,
        &sol.setpoint.u,
        &p.weights,
        &p.tail,
        &p.constraints,
    )?;
    let offset = weighted_norm_sq(&(&sol.setpoint.y - &p.target.y_d), &p.target.t);
    Ok(open + offset)
}
