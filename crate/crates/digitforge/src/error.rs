use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("digit {digit} is not in the scheme's alphabet")]
    UnknownDigit { digit: u64 },

    #[error("cell at prefix {prefix:?} has zero length")]
    EmptyCell { prefix: String },

    #[error("point lies on a subdivision endpoint at level {level}")]
    Endpoint { level: usize },

    #[error("prefix deeper than the density supports: {0}")]
    UnsupportedDepth(String),

    #[error("conditional is undefined: density vanishes at the point")]
    UndefinedConditional,

    #[error("sufficient-digit search exceeded the depth cap {cap}")]
    DepthCap { cap: usize },

    #[error("operation not supported for this scheme: {0}")]
    UnsupportedScheme(String),

    #[error("transition matrix is reducible; no unique invariant distribution")]
    NoUniqueInvariant,

    #[error("conditioning on a zero-length cell")]
    ConditioningOnNull,

    #[error("exact coalescence enumeration infeasible ({0}); use Monte Carlo mode")]
    InfeasibleExact(String),

    #[error("block budget of {budget} exhausted before coalescence")]
    BudgetExceeded { budget: usize },

    #[error("sampler mode does not match the scheme: {0}")]
    ModeMismatch(String),

    #[error("empty sample")]
    EmptySample,

    #[error("sample outside the required domain: {0}")]
    Domain(String),

    #[error("observed counts do not match the expected support: {0}")]
    SupportMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
