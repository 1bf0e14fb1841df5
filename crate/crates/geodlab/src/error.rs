//! Error type shared by all modules.

use crate::pathspace::GeodesicRecord;
use crate::Real;
use thiserror::Error;

pub type LabResult<T, S> = std::result::Result<T, GeodesicError<S>>;

#[derive(Debug, Error)]
pub enum GeodesicError<S: Real> {
    #[error("invalid manifold parameters: {0}")]
    InvalidManifold(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fundamental tensor is undefined on the zero section")]
    ZeroTangent,

    #[error("segment {segment} has length {length} above the uniqueness radius {radius}; refine the path")]
    RefinementRequired { segment: usize, length: S, radius: S },

    #[error("descent did not converge in {iterations} iterations (gradient norm {gradient_norm})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: S,
        /// Best iterate seen, so callers can inspect or restart.
        best: Box<GeodesicRecord<S>>,
    },

    #[error("degenerate critical point: {count} Hessian eigenvalue(s) within {zero_tol} of zero")]
    DegenerateIndex { count: usize, zero_tol: S },

    #[error("paths do not share endpoints: {0}")]
    EndpointMismatch(String),

    #[error("enumeration budget of {budget} elements exceeded at radius {radius}")]
    BudgetExceeded { budget: usize, radius: usize },

    #[error("degenerate fit input: {0}")]
    FitDegenerate(String),

    #[error("primitive decomposition undecided: {0}")]
    Undecided(String),

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("relaxation did not stall in {iterations} iterations (last decrease {last_decrease})")]
    RelaxNotConverged {
        iterations: usize,
        last_decrease: S,
        trace: Vec<S>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("database error: {0}")]
    Database(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
