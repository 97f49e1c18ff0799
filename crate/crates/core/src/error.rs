use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function (support, positivity).
    #[error("domain error: {0}")]
    Domain(String),

    /// Exponential tilt leaves the family's natural parameter space.
    #[error("tilt infeasible: {0}")]
    TiltInfeasible(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid aggregate-data summary or subgroup definition.
    #[error("invalid aggregate summary: {0}")]
    InvalidSummary(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("identification error: {0}")]
    Identification(String),

    #[error("constraint redundancy: condition number {cond:.3e} of the constraint correlation matrix exceeds {limit:.1e}")]
    Redundancy { cond: f64, limit: f64 },

    /// Zero is not inside the convex hull of the constraint rows.
    #[error("convex hull violation: residual {residual:.3e} after {iterations} iterations{}", context.as_deref().map(|c| format!(" at {c}")).unwrap_or_default())]
    HullViolation {
        residual: f64,
        iterations: usize,
        context: Option<String>,
    },

    #[error("singular Lagrange-multiplier Hessian (condition number {cond:.3e})")]
    SingularHessian { cond: f64 },

    #[error("singular J matrix (condition number {cond:.3e})")]
    SingularJ { cond: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("{what} failed to converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    /// Maximum likelihood estimate does not exist (perfect separation).
    #[error("maximum likelihood estimate does not exist: {0}")]
    Separation(String),

    #[error("empty subgroup cell: {0}")]
    EmptyCell(String),

    #[error("{failed} of {total} replications failed, exceeding the {budget_pct}% failure budget")]
    ReplicationBudget {
        failed: usize,
        total: usize,
        budget_pct: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::InvalidSummary(_) | Error::Config(_) | Error::Dimension(_) => 2,
            Error::Identification(_) | Error::Redundancy { .. } => 3,
            Error::HullViolation { .. } => 4,
            Error::SingularJ { .. } | Error::SingularHessian { .. } => 5,
            Error::ReplicationBudget { .. } => 6,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
