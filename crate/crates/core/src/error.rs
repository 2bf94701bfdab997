use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("conjugate and link are undefined for the l1 penalty (p = 1)")]
    UndefinedForL1,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("invalid dimension: {0}")]
    InvalidDim(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("kernel method {method} is incompatible with the feature spec: {reason}")]
    IncompatibleMethod { method: &'static str, reason: String },
    #[error("kernel matrix is not PSD (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("kernel matrix is singular")]
    SingularKernel,
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("dual solve did not converge (gradient norm {grad_norm:e})")]
    NotConverged { grad_norm: f64 },
    #[error("invalid Monte Carlo size: {0}")]
    InvalidM(usize),
    #[error("data spec has no target function")]
    NoTarget,
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("quadrature under-resolved: coefficient {k} changed by {change:e} when doubling the order")]
    QuadratureUnderResolved { k: usize, change: f64 },
    #[error("insufficient Hermite tail: need m_max >= {need}, have {have}")]
    InsufficientTail { need: usize, have: usize },
    #[error("invalid growth exponents: {0}")]
    InvalidExponents(String),
    #[error("grid of dual parameters is empty after filtering")]
    GridEmpty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wrong feature spec for this experiment: {0}")]
    WrongSpec(String),
    #[error("reference model failed: {0}")]
    ReferenceFailed(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
