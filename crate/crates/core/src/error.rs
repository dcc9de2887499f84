use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unknown manifold `{0}`")]
    UnknownManifold(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("taming violated: min ω(v,Jv)/|v|² = {min:.3e} (perturbation amplitude too large?)")]
    TamingViolation { min: f64 },
    #[error("ω is not closed: |dω| = {residual:.3e}")]
    NotClosed { residual: f64 },
    #[error("J² ≠ -1: residual {residual:.3e}")]
    NotAlmostComplex { residual: f64 },
    #[error("singular frame at grid point {point}")]
    SingularFrame { point: usize },
    #[error("singular metric at grid point {point}")]
    SingularMetric { point: usize },
    #[error("degree overflow: {p} + {q} > 4")]
    DegreeOverflow { p: usize, q: usize },
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("{solver} did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    Divergence { solver: &'static str, residual: f64, iterations: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("orthogonality defect {defect:.3e} exceeds tolerance {tol:.1e}")]
    NonOrthogonal { defect: f64, tol: f64 },
    #[error("dense storage budget exceeded: {needed} entries > {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("estimate space V is trivial")]
    TrivialSpace,
    #[error("right-hand side not in the numerical range of T: residual floor {residual:.3e}")]
    NotInRange { residual: f64 },
    #[error("projection defect {defect:.3e} exceeds tolerance {tol:.1e}")]
    ProjectionDefect { defect: f64, tol: f64 },
    #[error("quadrature under-resolved: {0}")]
    UnderResolved(String),
    #[error("expression parse error at {position}: {message}")]
    Expr { position: usize, message: String },
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
