use thiserror::Error;

/// Errors surfaced by model construction, certificate computation, and the
/// embedded optimizers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter set is unbounded in coordinate {coord} (direction {direction:+})")]
    UnboundedParameterSet { coord: usize, direction: i32 },

    #[error("model is not open-loop stable (sampled spectral radius {rho:.6} >= 1); use regional mode")]
    NotOpenLoopStable { rho: f64 },

    #[error("finite-tail horizon M=0: terminal decrease constant undefined for an empty tail")]
    EmptyTail,

    #[error("C_ell * rho^M = {value:.6} >= 1: increase the rollout horizon M")]
    IncreaseM { value: f64 },

    #[error("no certified horizon: alpha <= 0 for every N up to {cap}")]
    NoCertifiedHorizon { cap: usize },

    #[error("linearized dynamics not stabilizable at setpoint (Riccati iteration did not converge)")]
    NotStabilizable,

    #[error("setpoint solve did not converge: stationarity residual {stationarity:.3e}, steady-state residual {steady_state:.3e}")]
    SetpointNonConvergence { stationarity: f64, steady_state: f64 },

    #[error("internal QP failure: {0}")]
    QpInternal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
