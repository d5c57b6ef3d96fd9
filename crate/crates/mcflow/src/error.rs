use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// No feasible point exists; carries a human-readable witness
    /// (typically a violated cut) when one was extracted.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Iteration cap reached before the measured certificate met the
    /// requested accuracy. The partial result is not trustworthy.
    #[error("not certified: {0}")]
    NotCertified(String),
    /// A caller-declared analytic bound was contradicted at runtime
    /// (for example a congestion guess too small to admit any feasible
    /// point). Callers that sweep the bound catch this and enlarge it.
    #[error("bound violated: {0}")]
    BoundViolated(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl SolveError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SolveError::InvalidArgument(msg.into())
    }
}
