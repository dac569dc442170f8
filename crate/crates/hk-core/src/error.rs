use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HkError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cone geodesic undefined for positive radii at separation {separation} >= pi/2")]
    DegenerateGeodesic { separation: f64 },
    #[error("parameter {name} must be positive, got {value}")]
    NonpositiveParameter { name: &'static str, value: f64 },
    #[error("plan index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("instance too large for the brute-force oracle: {0}")]
    TooLarge(String),
    #[error("plan is not optimal: worst violation {violation:e}")]
    NotOptimal { violation: f64 },
    #[error("point lies in the vertex region: 1 + 2 tau xi = {denominator}")]
    VertexRegion { denominator: f64 },
    #[error("infeasible potential: {0}")]
    InfeasiblePotential(String),
    #[error("order violation at node {node}: xi_t - xibar_t = {gap:e}")]
    OrderViolation { node: usize, gap: f64 },
    #[error("trajectory left the contact set at t = {t}: gap {gap:e}")]
    LeftContactSet { t: f64, gap: f64 },
    #[error("argument outside the domain: {0}")]
    DomainError(String),
    #[error("undefined restriction weight: {0}")]
    UndefinedWeight(String),
    #[error("index sets do not partition the support: {0}")]
    NotAPartition(String),
    #[error("degenerate Jacobian determinant {delta} at node {node}")]
    DegenerateJacobian { node: usize, delta: f64 },
    #[error("c = {c} lies outside the interior of the domain of E")]
    OutsideDomain { c: f64 },
    #[error("empty evaluation grid")]
    EmptyGrid,
    #[error("McCann entry B11 is not strictly positive at c = {c} (value {value:e})")]
    McCannDegenerate { c: f64, value: f64 },
    #[error("singular mass {mass} meets an infinite recession constant")]
    RecessionInfinite { mass: f64 },
}

pub type Result<T> = std::result::Result<T, HkError>;
