//! Closed-loop simulation harness: disturbance/noise/drift injection,
//! cumulative tracking and constraint-violation metrics, per-step
//! estimation diagnostics, and ablation comparisons.

pub mod msd;
pub mod noise;
pub mod quadrotor;
pub mod scenarios;

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::controller::{AdaptiveController, ControllerMode, StepRecord};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::lms::{lms_diagnostics, LmsDiagnostics, LmsState};
use crate::model::{ConstraintSpec, ParameterSet, ParametricModel, TrackingTarget};
use crate::qp::{solve_qp, QpProblem};
use crate::solver::{setpoint::optimal_setpoint, SolverOptions};
use noise::{Channel, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No finite-tail cost (M = 0).
    NoTerm,
    /// No adaptation (the estimate stays at its initial value).
    NoAdapt,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_term" => Ok(Ablation::NoTerm),
            "no_adapt" => Ok(Ablation::NoAdapt),
            other => Err(Error::Config(format!("unknown ablation '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTerm => "no_term",
            Ablation::NoAdapt => "no_adapt",
        }
    }
}

/// A fully instantiated closed-loop experiment. Noise, disturbances, the
/// true-parameter drift, and everything downstream are pure functions of
/// the recorded seed.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ParametricModel,
    pub theta_set: ParameterSet,
    pub theta_true0: DVector<f64>,
    pub theta_hat0: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub weights: CostWeights,
    pub constraints: ConstraintSpec,
    pub t_weight: DMatrix<f64>,
    /// Piecewise-constant reference: (first step, output target), sorted.
    pub reference: Vec<(usize, DVector<f64>)>,
    pub x0: DVector<f64>,
    /// Uniform disturbance box (w_lo, w_hi); zero width disables.
    pub w_box: (DVector<f64>, DVector<f64>),
    /// Uniform measurement-noise box.
    pub v_box: (DVector<f64>, DVector<f64>),
    /// Per-step true-parameter drift box, projected back onto Theta.
    pub drift_box: Option<(DVector<f64>, DVector<f64>)>,
    pub mode: ControllerMode,
    pub ablation: Ablation,
    pub seed: u64,
    pub steps: usize,
    /// Trial (rho_V, c_V) for the robust-decrease diagnostic.
    pub decrease_consts: Option<(f64, f64)>,
    pub divergence_threshold: f64,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub track: f64,
    pub constr: f64,
    pub diverged: bool,
    pub wall_ms_per_step: f64,
}

pub struct SimResult {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub references: Vec<DVector<f64>>,
    pub optimal_outputs: Vec<DVector<f64>>,
    pub records: Vec<StepRecord>,
    /// Diagnostics for the transition into step k (None at k = 0 and for
    /// the no-adaptation ablation).
    pub diagnostics: Vec<Option<LmsDiagnostics>>,
    pub per_step_track: Vec<f64>,
    pub per_step_constr: Vec<f64>,
    pub track_metric: f64,
    pub constr_metric: f64,
    pub diverged: bool,
    pub asm4_violations: usize,
    pub wall_ms_per_step: f64,
}

impl SimResult {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            track: self.track_metric,
            constr: self.constr_metric,
            diverged: self.diverged,
            wall_ms_per_step: self.wall_ms_per_step,
        }
    }
}

/// Squared distance to the soft-constraint polytope, computed exactly by
/// projection (zero when there are no rows).
pub fn polytope_distance_sq(x: &DVector<f64>, constraints: &ConstraintSpec) -> Result<f64> {
    let r = constraints.n_rows();
    if r == 0 {
        return Ok(0.0);
    }
    let violated =
        (0..r).any(|i| constraints.d_mat.row(i).transpose().dot(x) > constraints.d_vec[i]);
    if !violated {
        return Ok(0.0);
    }
    let n = x.len();
    let mut qp = QpProblem::new(2.0 * DMatrix::identity(n, n), -2.0 * x);
    qp.g_in = constraints.d_mat.clone();
    qp.h_in = constraints.d_vec.clone();
    let sol = solve_qp(&qp)?;
    Ok((sol.z - x).norm_squared())
}

fn reference_at(schedule: &[(usize, DVector<f64>)], k: usize) -> &DVector<f64> {
    let mut current = &schedule[0].1;
    for (from, y) in schedule {
        if *from <= k {
            current = y;
        } else {
            break;
        }
    }
    current
}

/// Run one closed-loop scenario. Deterministic given the scenario seed.
pub fn run(sc: &Scenario) -> Result<SimResult> {
    let dims = sc.model.dims();
    if sc.reference.is_empty() {
        return Err(Error::Config("scenario needs at least one reference entry".into()));
    }
    let mut weights = sc.weights.clone();
    if sc.ablation == Ablation::NoTerm {
        weights.m = 0;
    }
    let lms = LmsState::new(sc.theta_hat0.clone(), sc.gamma.clone(), sc.theta_set.clone())?;
    let lms_proto = lms.clone();
    let target = TrackingTarget::new(sc.reference[0].1.clone(), sc.t_weight.clone())?;
    let mut controller = AdaptiveController::new(
        sc.model.clone(),
        sc.mode,
        lms,
        weights,
        sc.constraints.clone(),
        target,
        sc.options,
    )?;
    if sc.ablation == Ablation::NoAdapt {
        controller.set_adaptation(false);
    }

    // Plain (margin-free) constraints for the optimal-output metric.
    let mut metric_constraints = sc.constraints.clone();
    metric_constraints.u_margin = 0.0;

    // Scalar gain for the runtime parameter-gain check.
    let mu = {
        let g = &sc.gamma;
        let n = g.nrows();
        let diag = (0..n).all(|i| (0..n).all(|j| i == j || g[(i, j)] == 0.0));
        if n > 0 && diag && (0..n).all(|i| (g[(i, i)] - g[(0, 0)]).abs() < 1e-15) {
            Some(g[(0, 0)])
        } else {
            None
        }
    };

    let w0 = DVector::zeros(dims.n_w);
    let mut x = sc.x0.clone();
    let mut theta_true = sc.theta_true0.clone();
    let mut theta_prev = theta_true.clone();
    let mut v_now =
        Stream::for_channel(sc.seed, 0, Channel::Measurement).uniform_box(&sc.v_box.0, &sc.v_box.1);
    let mut x_hat = &x + &v_now;
    // (x_hat_k, u_k, w_k, v_k) of the previous step, for the diagnostics.
    let mut prev_step: Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = None;

    // Optimal outputs keyed by the (theta, y_d) bit pattern.
    let mut y_rd_cache: HashMap<u64, DVector<f64>> = HashMap::new();

    let mut out = SimResult {
        states: Vec::with_capacity(sc.steps),
        inputs: Vec::with_capacity(sc.steps),
        outputs: Vec::with_capacity(sc.steps),
        references: Vec::with_capacity(sc.steps),
        optimal_outputs: Vec::with_capacity(sc.steps),
        records: Vec::with_capacity(sc.steps),
        diagnostics: Vec::with_capacity(sc.steps),
        per_step_track: Vec::with_capacity(sc.steps),
        per_step_constr: Vec::with_capacity(sc.steps),
        track_metric: 0.0,
        constr_metric: 0.0,
        diverged: false,
        asm4_violations: 0,
        wall_ms_per_step: 0.0,
    };
    let wall_start = Instant::now();

    for k in 0..sc.steps {
        if !x.iter().all(|v| v.is_finite()) || x.norm() > sc.divergence_threshold {
            out.diverged = true;
            break;
        }
        let y_d = reference_at(&sc.reference, k).clone();
        controller.set_target_output(y_d.clone());

        let (u, mut rec) = controller.step(&x_hat)?;
        let theta_after = rec.theta_hat.clone();

        // Estimation-error inequalities for the transition (k-1) -> k.
        let diag = match (&prev_step, sc.ablation != Ablation::NoAdapt, out.records.last()) {
            (Some((x_hat_prev, u_prev, w_prev, v_prev)), true, Some(prev_rec)) => {
                let before = lms_proto.with_estimate(prev_rec.theta_hat.clone());
                let after = lms_proto.with_estimate(theta_after.clone());
                Some(lms_diagnostics(
                    &before,
                    &after,
                    &sc.model,
                    &theta_prev,
                    &theta_true,
                    x_hat_prev,
                    u_prev,
                    &x_hat,
                    Some(w_prev),
                    Some(v_prev),
                    Some(&v_now),
                )?)
            }
            _ => None,
        };

        // Runtime check of the parameter-gain condition at the measured state.
        if let Some(mu) = mu {
            let phi = sc.model.eval_g(&x_hat, &u, &w0);
            let nrm = crate::linalg::spectral_norm(&phi);
            if mu * nrm * nrm > 1.0 + 1e-12 {
                out.asm4_violations += 1;
            }
        }

        // Objective-style metric terms at the true state.
        let y = sc.model.eval_h(&x, &u, &theta_true);
        let y_rd = {
            let mut hasher = 0xcbf29ce484222325u64;
            let mut feed = |v: f64| {
                hasher ^= v.to_bits();
                hasher = hasher.wrapping_mul(0x100000001b3);
            };
            theta_true.iter().for_each(|v| feed(*v));
            y_d.iter().for_each(|v| feed(*v));
            match y_rd_cache.get(&hasher) {
                Some(v) => v.clone(),
                None => {
                    let tgt = TrackingTarget::new(y_d.clone(), sc.t_weight.clone())?;
                    let sp = optimal_setpoint(&sc.model, &theta_true, &tgt, &metric_constraints)?;
                    y_rd_cache.insert(hasher, sp.y.clone());
                    sp.y
                }
            }
        };
        let track = (&y - &y_rd).norm_squared();
        let constr = polytope_distance_sq(&x, &sc.constraints)?;
        out.per_step_track.push(track);
        out.per_step_constr.push(constr);
        out.track_metric += track;
        out.constr_metric += constr;

        // Robust-decrease diagnostic against trial constants.
        if let (Some((rho_v, c_v)), Some(d), Some(prev_rec)) =
            (sc.decrease_consts, diag.as_ref(), out.records.last())
        {
            let mismatch = (&d.w_tilde + &d.x_tilde).norm_squared()
                + (&theta_after - &prev_rec.theta_hat).norm_squared();
            rec.decrease_slack = Some(rec.j_star - rho_v * prev_rec.j_star - c_v * mismatch);
        }
        out.diagnostics.push(diag);

        // Advance the truth.
        let w = Stream::for_channel(sc.seed, k as u64, Channel::Disturbance)
            .uniform_box(&sc.w_box.0, &sc.w_box.1);
        let x_next = sc.model.eval_f(&x, &u, &theta_true, &w);
        theta_prev = theta_true.clone();
        if let Some((d_lo, d_hi)) = &sc.drift_box {
            if (d_hi - d_lo).amax() > 0.0 {
                let delta =
                    Stream::for_channel(sc.seed, k as u64, Channel::Drift).uniform_box(d_lo, d_hi);
                theta_true = sc.theta_set.clamp_box(&(&theta_true + delta));
            }
        }
        let v_next = Stream::for_channel(sc.seed, (k + 1) as u64, Channel::Measurement)
            .uniform_box(&sc.v_box.0, &sc.v_box.1);

        out.states.push(x.clone());
        out.inputs.push(u.clone());
        out.outputs.push(y);
        out.references.push(y_d);
        out.optimal_outputs.push(y_rd);
        prev_step = Some((x_hat.clone(), u.clone(), w.clone(), v_now.clone()));
        out.records.push(rec);

        x = x_next;
        v_now = v_next;
        x_hat = &x + &v_now;
    }

    let steps_done = out.records.len().max(1);
    out.wall_ms_per_step = wall_start.elapsed().as_secs_f64() * 1e3 / steps_done as f64;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub ablation: String,
    pub track: f64,
    pub constr: f64,
    pub track_ratio: f64,
    pub constr_ratio: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:>14} {:>14} {:>12} {:>12} {:>9}\n",
            "ablation", "track", "constr", "track/full", "constr/full", "diverged"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:>14.6e} {:>14.6e} {:>12.2} {:>12.2} {:>9}\n",
                r.ablation, r.track, r.constr, r.track_ratio, r.constr_ratio, r.diverged
            ));
        }
        s
    }
}

/// Normalize a set of ablation results against the `full` entry.
pub fn compare(results: &[(Ablation, &SimResult)]) -> Result<Comparison> {
    let full = results
        .iter()
        .find(|(a, _)| *a == Ablation::Full)
        .ok_or_else(|| Error::Config("comparison needs a 'full' ablation".into()))?
        .1;
    let ratio = |v: f64, base: f64| if base > 0.0 { v / base } else { f64::INFINITY };
    Ok(Comparison {
        rows: results
            .iter()
            .map(|(a, r)| ComparisonRow {
                ablation: a.name().to_string(),
                track: r.track_metric,
                constr: r.constr_metric,
                track_ratio: ratio(r.track_metric, full.track_metric),
                constr_ratio: ratio(r.constr_metric, full.constr_metric),
                diverged: r.diverged,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polytope_distance_matches_halfspace() {
        // Single row x1 <= 0.7: distance is the positive part.
        let mut cons = ConstraintSpec::unconstrained_states(
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            2,
        );
        cons.d_mat = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        cons.d_vec = DVector::from_element(1, 0.7);
        cons.slack_weights = DVector::from_element(1, 1.0);
        let x = DVector::from_column_slice(&[1.0, 5.0]);
        let d = polytope_distance_sq(&x, &cons).unwrap();
        approx::assert_relative_eq!(d, 0.09, epsilon = 1e-9);
        let inside = DVector::from_column_slice(&[0.5, -3.0]);
        assert_eq!(polytope_distance_sq(&inside, &cons).unwrap(), 0.0);
    }

    #[test]
    fn reference_schedule_lookup() {
        let sched =
            vec![(0usize, DVector::from_element(1, 1.0)), (10, DVector::from_element(1, 2.0))];
        assert_eq!(reference_at(&sched, 0)[0], 1.0);
        assert_eq!(reference_at(&sched, 9)[0], 1.0);
        assert_eq!(reference_at(&sched, 10)[0], 2.0);
        assert_eq!(reference_at(&sched, 99)[0], 2.0);
    }
}
