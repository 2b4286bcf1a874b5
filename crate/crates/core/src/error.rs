/// Crate-wide error type.
///
/// Variants follow the failure classes the operations distinguish: domain
/// errors (bad arguments), validation errors (malformed objects), state
/// errors (lifecycle misuse), budget exhaustion, capacity guards, selection
/// failures, and optimizer non-convergence.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("state error: {0}")]
    State(String),

    #[error("budget exhausted: {used} of {cap} sample-and-evaluate queries used")]
    BudgetExhausted { used: u64, cap: u64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("optimizer did not converge: gradient norm {grad_norm:.3e} after {iters} iterations")]
    NoConvergence { grad_norm: f64, iters: usize },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }
}
