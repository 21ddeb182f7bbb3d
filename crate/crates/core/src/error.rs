use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    /// Every individual has exactly `nu` children, so `W = 1` almost surely.
    #[error("deterministic {nu}-ary tree: the martingale limit is constant")]
    BoettcherDegenerate { nu: u64 },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("operation requires the {expected} regime")]
    InvalidRegime { expected: &'static str },

    #[error("{value} lies outside the covered range [{low}, {high}]")]
    OutOfRange { value: f64, low: f64, high: f64 },

    #[error("no τ on the search grid gives φ(τ) < 1 (smallest φ = {min_phi})")]
    NoFeasibleTau { min_phi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("local-time fields live on different levels ({0} and {1})")]
    LevelMismatch(u32, u32),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
