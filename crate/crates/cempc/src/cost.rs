//! Stage cost with soft-constraint penalty, finite-tail terminal costs,
//! and the full open-loop MPC objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_sym_pd, weighted_norm_sq};
use crate::model::{ConstraintSpec, ParametricModel};

/// Tracking weights and horizons. Slack weights ride on [`ConstraintSpec`]
/// (they are per constraint row) and the output weight on the target.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal scaling omega > 0.
    pub omega: f64,
    /// Prediction horizon N >= 1.
    pub n: usize,
    /// Rollout (tail) horizon M >= 0.
    pub m: usize,
}

impl CostWeights {
    pub fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        check_sym_pd(&self.q, "Q")?;
        check_sym_pd(&self.r, "R")?;
        if self.q.nrows() != n_x || self.r.nrows() != n_u {
            return Err(Error::Dimension("cost weight sizes".into()));
        }
        if !(self.omega > 0.0) {
            return Err(Error::Config("omega must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("prediction horizon N must be >= 1".into()));
        }
        Ok(())
    }
}

/// Input policy for the finite-tail rollout.
#[derive(Debug, Clone)]
pub enum TailPolicy {
    /// Hold the steady-state input u_s over the tail.
    ConstantInput,
    /// u = clip_U(u_s + K (x - x_s)); evaluates to exactly u_s at x_s.
    LinearFeedback { gain: DMatrix<f64> },
}

impl TailPolicy {
    pub fn tail_input(
        &self,
        x: &DVector<f64>,
        x_s: &DVector<f64>,
        u_s: &DVector<f64>,
        constraints: &ConstraintSpec,
    ) -> DVector<f64> {
        match self {
            TailPolicy::ConstantInput => u_s.clone(),
            TailPolicy::LinearFeedback { gain } => {
                constraints.clip_input(&(u_s + gain * (x - x_s)))
            }
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, TailPolicy::LinearFeedback { .. })
    }
}

/// Sum of weighted squared violations of the soft state rows.
pub fn violation_penalty(x: &DVector<f64>, constraints: &ConstraintSpec) -> f64 {
    let mut p = 0.0;
    for i in 0..constraints.n_rows() {
        let v = constraints.d_mat.row(i).transpose().dot(x) - constraints.d_vec[i];
        if v > 0.0 {
            p += constraints.slack_weights[i] * v * v;
        }
    }
    p
}

/// ||x - x_s||_Q^2 + ||u - u_s||_R^2 + sum_i q_i max(D_i x - d_i, 0)^2.
pub fn stage_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    weights: &CostWeights,
    constraints: &ConstraintSpec,
) -> f64 {
    weighted_norm_sq(&(x - x_s), &weights.q)
        + weighted_norm_sq(&(u - u_s), &weights.r)
        + violation_penalty(x, constraints)
}

/// Tail states and inputs from x_n over M steps under the tail policy.
pub fn tail_rollout(
    model: &ParametricModel,
    x_n: &DVector<f64>,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    theta: &DVector<f64>,
    m: usize,
    tail: &TailPolicy,
    constraints: &ConstraintSpec,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let w0 = DVector::zeros(model.dims().n_w);
    let mut states = Vec::with_capacity(m);
    let mut inputs = Vec::with_capacity(m);
    let mut x = x_n.clone();
    for _ in 0..m {
        let u = tail.tail_input(&x, x_s, u_s, constraints);
        let next = model.eval_f(&x, &u, theta, &w0);
        states.push(x);
        inputs.push(u);
        x = next;
    }
    (states, inputs)
}

/// Finite-tail terminal cost: M stage costs along the tail rollout.
#[allow(clippy::too_many_arguments)]
pub fn terminal_cost(
    model: &ParametricModel,
    x_n: &DVector<f64>,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    theta: &DVector<f64>,
    weights: &CostWeights,
    tail: &TailPolicy,
    constraints: &ConstraintSpec,
) -> f64 {
    let (states, inputs) = tail_rollout(model, x_n, x_s, u_s, theta, weights.m, tail, constraints);
    states
        .iter()
        .zip(&inputs)
        .map(|(x, u)| stage_cost(x, u, x_s, u_s, weights, constraints))
        .sum()
}

/// Finite-horizon cost: N stage costs plus omega times the terminal cost.
/// States come from the same nominal recursion as [`crate::model::rollout`].
#[allow(clippy::too_many_arguments)]
pub fn open_loop_cost(
    model: &ParametricModel,
    x0: &DVector<f64>,
    theta: &DVector<f64>,
    inputs: &[DVector<f64>],
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    weights: &CostWeights,
    tail: &TailPolicy,
    constraints: &ConstraintSpec,
) -> Result<f64> {
    if inputs.len() != weights.n {
        return Err(Error::Dimension(format!(
            "open-loop cost got {} inputs for horizon N={}",
            inputs.len(),
            weights.n
        )));
    }
    let xs = crate::model::rollout(model, x0, theta, inputs)?;
    let mut total = 0.0;
    for k in 0..weights.n {
        total += stage_cost(&xs[k], &inputs[k], x_s, u_s, weights, constraints);
    }
    total += weights.omega
        * terminal_cost(model, &xs[weights.n], x_s, u_s, theta, weights, tail, constraints);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    use crate::model::{Dims, ParametricModel};

    fn weights(n: usize, m: usize, omega: f64) -> CostWeights {
        CostWeights {
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            omega,
            n,
            m,
        }
    }

    fn scalar_decay_model() -> ParametricModel {
        // x+ = theta x + u (theta plays the decay rate).
        let dims = Dims { n_x: 1, n_u: 1, n_theta: 1, n_w: 1, n_y: 1 };
        ParametricModel::new(
            dims,
            Arc::new(|x: &DVector<f64>, u: &DVector<f64>, th: &DVector<f64>, w: &DVector<f64>| {
                DVector::from_element(1, th[0] * x[0] + u[0] + w[0])
            }),
            Arc::new(|x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| {
                DMatrix::from_element(1, 1, x[0])
            }),
            Arc::new(|x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| x.clone()),
        )
    }

    fn free_inputs(n_x: usize) -> ConstraintSpec {
        ConstraintSpec::unconstrained_states(
            DVector::from_element(1, -1e9),
            DVector::from_element(1, 1e9),
            n_x,
        )
    }

    #[test]
    fn stage_cost_zero_at_setpoint() {
        let w = weights(1, 0, 1.0);
        let c = free_inputs(1);
        let x = DVector::from_element(1, 0.3);
        let u = DVector::from_element(1, -0.1);
        assert_eq!(stage_cost(&x, &u, &x, &u, &w, &c), 0.0);
    }

    #[test]
    fn stage_cost_with_violation() {
        // Constraint x <= 0.7 with q = 10; x = 1, x_s = 0, Q = 1 -> 1 + 10*0.09.
        let w = weights(1, 0, 1.0);
        let mut c = free_inputs(1);
        c.d_mat = DMatrix::from_element(1, 1, 1.0);
        c.d_vec = DVector::from_element(1, 0.7);
        c.slack_weights = DVector::from_element(1, 10.0);
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(1);
        let got = stage_cost(&x, &u, &DVector::zeros(1), &u, &w, &c);
        assert_relative_eq!(got, 1.0 + 10.0 * 0.09, epsilon = 1e-12);
    }

    #[test]
    fn terminal_cost_zero_cases() {
        let m = scalar_decay_model();
        let th = DVector::from_element(1, 0.5);
        let c = free_inputs(1);
        // x_n = x_s (a true fixed point of x+ = 0.5 x + u with u = 0.5 x_s).
        let x_s = DVector::from_element(1, 1.0);
        let u_s = DVector::from_element(1, 0.5);
        let w = weights(1, 4, 1.0);
        let v = terminal_cost(&m, &x_s, &x_s, &u_s, &th, &w, &TailPolicy::ConstantInput, &c);
        assert!(v < 1e-20);
        // M = 0 gives an empty sum.
        let w0 = weights(1, 0, 1.0);
        let x_n = DVector::from_element(1, 3.0);
        assert_eq!(
            terminal_cost(&m, &x_n, &x_s, &u_s, &th, &w0, &TailPolicy::ConstantInput, &c),
            0.0
        );
    }

    #[test]
    fn terminal_cost_geometric_rollout() {
        // x+ = 0.5x, x_s = u_s = 0, Q = 1, stage input term vanishes under
        // the constant tail; M = 3, x_N = 1 -> 1 + 0.25 + 0.0625.
        let m = scalar_decay_model();
        let th = DVector::from_element(1, 0.5);
        let c = free_inputs(1);
        let w = weights(1, 3, 1.0);
        let v = terminal_cost(
            &m,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &DVector::zeros(1),
            &th,
            &w,
            &TailPolicy::ConstantInput,
            &c,
        );
        assert_relative_eq!(v, 1.3125, epsilon = 1e-12);
    }

    #[test]
    fn open_loop_cost_hand_example() {
        // N=1, u_0=0, omega=1, M=3: stage at x=1 plus tail from x=0.5.
        let m = scalar_decay_model();
        let th = DVector::from_element(1, 0.5);
        let c = free_inputs(1);
        let w = weights(1, 3, 1.0);
        let v = open_loop_cost(
            &m,
            &DVector::from_element(1, 1.0),
            &th,
            &[DVector::zeros(1)],
            &DVector::zeros(1),
            &DVector::zeros(1),
            &w,
            &TailPolicy::ConstantInput,
            &c,
        )
        .unwrap();
        assert_relative_eq!(v, 1.0 + 0.25 + 0.0625 + 0.015625, epsilon = 1e-12);
    }

    #[test]
    fn open_loop_cost_zero_at_fixed_point() {
        let m = scalar_decay_model();
        let th = DVector::from_element(1, 0.5);
        let c = free_inputs(1);
        let w = weights(3, 2, 7.0);
        let x_s = DVector::from_element(1, 2.0);
        let u_s = DVector::from_element(1, 1.0);
        let v = open_loop_cost(
            &m,
            &x_s,
            &th,
            &vec![u_s.clone(); 3],
            &x_s,
            &u_s,
            &w,
            &TailPolicy::ConstantInput,
            &c,
        )
        .unwrap();
        assert!(v.abs() < 1e-20);
    }

    #[test]
    fn omega_zero_drops_tail() {
        let m = scalar_decay_model();
        let th = DVector::from_element(1, 0.5);
        let c = free_inputs(1);
        let mut w = weights(2, 5, 1.0);
        w.omega = 1e-300; // omega must stay positive; vanishing weight
        let with_tail = open_loop_cost(
            &m,
            &DVector::from_element(1, 1.0),
            &th,
            &[DVector::zeros(1), DVector::zeros(1)],
            &DVector::zeros(1),
            &DVector::zeros(1),
            &w,
            &TailPolicy::ConstantInput,
            &c,
        )
        .unwrap();
        // Plain two-stage cost: 1 + 0.25.
        assert_relative_eq!(with_tail, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn feedback_tail_returns_us_at_xs() {
        let gain = DMatrix::from_element(1, 1, -0.4);
        let tail = TailPolicy::LinearFeedback { gain };
        let c = free_inputs(1);
        let x_s = DVector::from_element(1, 0.7);
        let u_s = DVector::from_element(1, 0.2);
        let u = tail.tail_input(&x_s, &x_s, &u_s, &c);
        assert!((u - u_s).amax() < 1e-10);
    }
}
