use thiserror::Error;

use crate::scenario::Violation;

pub type Result<T, E = NesError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NesError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("rank condition violated: rank {rank}, required {required}")]
    RegulatorRankDeficient { rank: usize, required: usize },

    #[error("regulator equations residual {0:e} exceeds tolerance")]
    RegulatorResidual(f64),

    #[error("Riccati recursion did not converge within {0} iterations")]
    RiccatiDiverged(usize),

    #[error("feedback gain is not stabilizing: spectral radius {0}")]
    NotStabilizing(f64),

    #[error("agent index {index} out of range for {n_agents} agents")]
    IndexOutOfRange { index: usize, n_agents: usize },

    #[error("empty box on coordinate {coord}: [{lo}, {hi}]")]
    EmptyBox { coord: usize, lo: f64, hi: f64 },

    #[error("closed-form equilibrium leaves the box of agent {agent}")]
    BoxActive { agent: usize },

    #[error("best response iteration did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("initial position of agent {agent} lies outside its box")]
    InitOutsideBox { agent: usize },

    #[error("divergence detected at step {step}: {reason}")]
    DivergenceDetected { step: usize, reason: String },

    #[error("scenario schema errors:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),

    #[error("scenario assumptions violated:\n  {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n  "))]
    AssumptionViolated(Vec<Violation>),

    #[error("oracle convention {oracle} does not match scenario convention {scenario}")]
    ConventionMismatch { oracle: String, scenario: String },

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
