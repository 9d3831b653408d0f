use thiserror::Error;

/// Failure of a single primitive during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("pole (division by zero or tan singularity)")]
    Pole,
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("pieces do not partition the domain: {0}")]
    BadPartition(String),
    #[error("invalid map file: {0}")]
    MapFile(String),
    #[error("x = {x} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("evaluation failed at {at}: {source}")]
    Eval { at: String, source: EvalError },
    #[error("x = {0} is within the critical-point guard zone")]
    CriticalProximity(f64),
    #[error("non-convergent order fit at c = {c}: {reason}")]
    FlatCritical { c: f64, reason: String },
    #[error("root isolation overflow for period {period}: {sign_changes} sign changes on {cells} cells")]
    RootOverflow {
        period: usize,
        sign_changes: usize,
        cells: usize,
    },
    #[error("{0} is not a critical point")]
    NotCritical(f64),
    #[error("need at least {needed} usable terms, got {got}")]
    TooFewTerms { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("power iteration did not converge: residual {residual:e} after {steps} steps")]
    NonConvergent { residual: f64, steps: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("mismatched bin grids: {0}")]
    GridMismatch(String),
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error("no sign change for {0} in the parameter range")]
    NoSignChange(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::UnknownIdentifier(_) => "unknown_identifier",
            Error::BadPartition(_) => "bad_partition",
            Error::MapFile(_) => "map_file",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::Eval { .. } => "evaluation",
            Error::CriticalProximity(_) => "critical_proximity",
            Error::FlatCritical { .. } => "flat_critical",
            Error::RootOverflow { .. } => "root_overflow",
            Error::NotCritical(_) => "not_critical",
            Error::TooFewTerms { .. } => "too_few_terms",
            Error::Degenerate(_) => "degenerate",
            Error::NonConvergent { .. } => "non_convergent",
            Error::Precondition(_) => "precondition",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidPair(_) => "invalid_pair",
            Error::NoSignChange(_) => "no_sign_change",
        }
    }
}
