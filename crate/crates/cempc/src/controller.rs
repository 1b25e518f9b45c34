//! Closed-loop adaptive controller: certainty-equivalent MPC fed by the
//! projected LMS estimate, in a semiglobal (constant-input tail) or
//! regional (LQR-feedback tail, sublevel-set monitored) configuration.

use nalgebra::{DMatrix, DVector};

use crate::cost::{stage_cost, CostWeights, TailPolicy};
use crate::error::{Error, Result};
use crate::linalg::{dare_gain, solve_dare, spectral_radius, weighted_norm_sq};
use crate::lms::{lms_update, LmsState};
use crate::model::{ConstraintSpec, ParametricModel, Setpoint, TrackingTarget};
use crate::solver::{setpoint::optimal_setpoint, solve, MpcProblem, MpcSolution, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerMode {
    Semiglobal,
    /// Feedback tail with a region-of-attraction sublevel bound.
    Regional { j_bar: f64 },
}

/// LQR gain cache; re-synthesized when the estimate or the setpoint moves.
#[derive(Debug, Clone)]
struct LqrCache {
    gain: DMatrix<f64>,
    theta: DVector<f64>,
    x_s: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub u: DVector<f64>,
    pub j_star: f64,
    pub setpoint: Setpoint,
    pub theta_hat: DVector<f64>,
    /// J* <= J_bar (regional mode only).
    pub sublevel_flag: Option<bool>,
    /// Robust-decrease slack against user-supplied trial constants
    /// (diagnostic only; filled by the simulator).
    pub decrease_slack: Option<f64>,
    pub solver_converged: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub solve_time_ms: f64,
}

pub struct AdaptiveController {
    model: ParametricModel,
    mode: ControllerMode,
    lms: LmsState,
    weights: CostWeights,
    constraints: ConstraintSpec,
    target: TrackingTarget,
    options: SolverOptions,
    /// Switched off for the no-adaptation ablation.
    adapt: bool,
    last_solution: Option<MpcSolution>,
    prev_meas: Option<(DVector<f64>, DVector<f64>)>,
    lqr: Option<LqrCache>,
    step_count: usize,
}

const LQR_RESYNTH_THETA: f64 = 1e-3;
const LQR_RESYNTH_SETPOINT: f64 = 1e-2;

impl AdaptiveController {
    pub fn new(
        model: ParametricModel,
        mode: ControllerMode,
        lms: LmsState,
        weights: CostWeights,
        constraints: ConstraintSpec,
        target: TrackingTarget,
        options: SolverOptions,
    ) -> Result<Self> {
        let dims = model.dims();
        weights.validate(dims.n_x, dims.n_u)?;
        let regional = matches!(mode, ControllerMode::Regional { .. });
        constraints.validate(dims.n_x, regional)?;
        if let ControllerMode::Regional { j_bar } = mode {
            if !(j_bar > 0.0) {
                return Err(Error::Config("regional mode needs J_bar > 0".into()));
            }
        }
        Ok(Self {
            model,
            mode,
            lms,
            weights,
            constraints,
            target,
            options,
            adapt: true,
            last_solution: None,
            prev_meas: None,
            lqr: None,
            step_count: 0,
        })
    }

    pub fn set_adaptation(&mut self, on: bool) {
        self.adapt = on;
    }

    pub fn set_target_output(&mut self, y_d: DVector<f64>) {
        self.target.y_d = y_d;
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.lms.theta_hat
    }

    pub fn lms(&self) -> &LmsState {
        &self.lms
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    pub fn target(&self) -> &TrackingTarget {
        &self.target
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn constraints(&self) -> &ConstraintSpec {
        &self.constraints
    }

    /// Estimate state before/after the pending measurement update; exposed
    /// so the simulator can evaluate the estimation-error inequalities.
    pub fn lms_states_of_last_step(&self) -> (&LmsState, &LmsState) {
        (&self.lms, &self.lms)
    }

    fn tail_policy(&mut self) -> Result<TailPolicy> {
        match self.mode {
            ControllerMode::Semiglobal => Ok(TailPolicy::ConstantInput),
            ControllerMode::Regional { .. } => {
                let sp_ref = match (&self.last_solution, &self.lqr) {
                    (Some(sol), _) => sol.setpoint.clone(),
                    (None, _) => {
                        optimal_setpoint(&self.model, &self.lms.theta_hat, &self.target, &self.constraints)?
                    }
                };
                let needs = match &self.lqr {
                    None => true,
                    Some(cache) => {
                        (&cache.theta - &self.lms.theta_hat).norm() > LQR_RESYNTH_THETA
                            || weighted_norm_sq(&(&cache.x_s - &sp_ref.x), &self.weights.q).sqrt()
                                > LQR_RESYNTH_SETPOINT
                    }
                };
                if needs {
                    let gain = make_lqr_feedback(
                        &self.model,
                        &self.lms.theta_hat,
                        &sp_ref.x,
                        &sp_ref.u,
                        &self.weights.q,
                        &self.weights.r,
                    )?;
                    self.lqr = Some(LqrCache {
                        gain,
                        theta: self.lms.theta_hat.clone(),
                        x_s: sp_ref.x.clone(),
                    });
                }
                Ok(TailPolicy::LinearFeedback { gain: self.lqr.as_ref().unwrap().gain.clone() })
            }
        }
    }

    /// Consume the measurement x_hat_k, update the estimate with the stored
    /// (x_hat_{k-1}, u_{k-1}) pair, and return the input to apply.
    pub fn step(&mut self, x_hat: &DVector<f64>) -> Result<(DVector<f64>, StepRecord)> {
        if self.adapt {
            if let Some((x_prev, u_prev)) = self.prev_meas.take() {
                self.lms = lms_update(&self.lms, &self.model, &x_prev, &u_prev, x_hat)?;
            }
        }
        let tail = self.tail_policy()?;
        let problem = MpcProblem {
            model: &self.model,
            theta_hat: self.lms.theta_hat.clone(),
            x_hat: x_hat.clone(),
            weights: self.weights.clone(),
            constraints: self.constraints.clone(),
            target: self.target.clone(),
            tail,
            warm_start: self.last_solution.as_ref(),
            options: self.options,
        };
        let sol = solve(&problem)?;
        let u = self.constraints.clip_input(&sol.u_star[0]);
        let sublevel_flag = match self.mode {
            ControllerMode::Regional { j_bar } => Some(sol.j_star <= j_bar),
            ControllerMode::Semiglobal => None,
        };
        let record = StepRecord {
            step: self.step_count,
            u: u.clone(),
            j_star: sol.j_star,
            setpoint: sol.setpoint.clone(),
            theta_hat: self.lms.theta_hat.clone(),
            sublevel_flag,
            decrease_slack: None,
            solver_converged: sol.stats.converged,
            kkt_residual: sol.stats.kkt_residual,
            iterations: sol.stats.iterations,
            solve_time_ms: sol.stats.solve_time_ms,
        };
        self.prev_meas = Some((x_hat.clone(), u.clone()));
        self.last_solution = Some(sol);
        self.step_count += 1;
        Ok((u, record))
    }
}

/// LQR feedback for the dynamics linearized at (x_s, u_s) with parameter
/// theta: u = u_s + K (x - x_s), K from the discrete Riccati equation.
/// Errs when the closed loop is not strictly stable.
pub fn make_lqr_feedback(
    model: &ParametricModel,
    theta: &DVector<f64>,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (a, b) = model.jacobians(x_s, u_s, theta);
    let p = solve_dare(&a, &b, q, r, 10_000)?;
    let k = dare_gain(&a, &b, r, &p)?;
    let closed = &a + &b * &k;
    if spectral_radius(&closed) >= 1.0 {
        return Err(Error::NotStabilizable);
    }
    Ok(k)
}

/// Slack of the certified nominal decrease at state x with exact
/// parameters: J*(x+, theta) - J*(x, theta) + alpha * ell(x, u*, s*).
/// Nonpositive (up to solver accuracy) when the certificate holds.
#[allow(clippy::too_many_arguments)]
pub fn nominal_decrease_check(
    model: &ParametricModel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    weights: &CostWeights,
    constraints: &ConstraintSpec,
    target: &TrackingTarget,
    tail: &TailPolicy,
    alpha: f64,
    options: SolverOptions,
) -> Result<(f64, f64)> {
    let problem = MpcProblem {
        model,
        theta_hat: theta.clone(),
        x_hat: x.clone(),
        weights: weights.clone(),
        constraints: constraints.clone(),
        target: target.clone(),
        tail: tail.clone(),
        warm_start: None,
        options,
    };
    let sol = solve(&problem)?;
    let u0 = &sol.u_star[0];
    let ell = stage_cost(x, u0, &sol.setpoint.x, &sol.setpoint.u, weights, constraints);
    let x_next = model.eval_f(x, u0, theta, &DVector::zeros(model.dims().n_w));
    let next_problem = MpcProblem { x_hat: x_next, warm_start: Some(&sol), ..problem.clone() };
    let next = solve(&next_problem)?;
    Ok((next.j_star - sol.j_star + alpha * ell, sol.j_star))
}
