use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("step size alpha = {0} violates 0 < alpha < 1")]
    StepSize(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("policy enumeration of {count} policies exceeds the limit of {limit}")]
    EnumerationGuard { count: f64, limit: usize },

    #[error("product enumeration budget of {budget} exceeded; largest feasible depth is {max_feasible_depth}")]
    ProductBudget { budget: usize, max_feasible_depth: usize },

    #[error("rate beta = {beta} is not contractive (need beta < 1)")]
    NonContractive { beta: f64 },

    #[error("certified tail bound did not reach {target:e} within depth {depth_cap} (last bound {reached:e}); epsilon is too small")]
    TailNotConverged { depth_cap: usize, target: f64, reached: f64 },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("certificate does not match this family (expected fingerprint {expected}, got {actual})")]
    CertificateMismatch { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
