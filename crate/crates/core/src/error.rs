use thiserror::Error;

use crate::lagrangian::ConvergenceReport;

#[derive(Debug, Error)]
pub enum CnsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("operation requires a {expected} field")]
    Representation { expected: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dyadic band [{j_min}, {j_max}] exceeds the grid Nyquist radius {nyquist}")]
    BandExceedsNyquist { j_min: i32, j_max: i32, nyquist: f64 },

    #[error("dyadic block {j} outside the bank range [{j_min}, {j_max}]")]
    BlockOutOfRange { j: i32, j_min: i32, j_max: i32 },

    #[error("Besov index (s={s}, p={p}) not admissible in dimension {dim}: {reason}")]
    BesovIndex { s: f64, p: f64, dim: usize, reason: &'static str },

    #[error("index constraints violated for {kind}: {reason}")]
    EstimateIndex { kind: &'static str, reason: String },

    #[error("density {value} outside the admissible interval ({lo}, {hi}) of law `{law}`")]
    DensityOutOfRange { law: String, value: f64, lo: f64, hi: f64 },

    #[error("vacuum: density infimum {min_density} at t={time}")]
    Vacuum { time: f64, min_density: f64 },

    #[error("flow map lost invertibility at t={time}: min J = {min_jacobian}")]
    DiffeomorphismLoss { time: f64, min_jacobian: f64 },

    #[error("inverse flow map did not converge: residual {residual} after {iterations} iterations")]
    InverseMap { residual: f64, iterations: usize },

    #[error("time-step instability at t={time}: norm grew by {growth}x in one step")]
    Instability { time: f64, growth: f64 },

    #[error("Picard iteration did not converge (horizon fell to {horizon}, below 4 dt)")]
    NoConvergence {
        horizon: f64,
        report: Box<ConvergenceReport>,
    },

    #[error("time grids do not match: {0}")]
    TimeGrid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CnsError>;
