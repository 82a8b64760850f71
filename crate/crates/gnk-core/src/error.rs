use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnkError {
    #[error("point {point:?} lies outside the domain box of {what}")]
    OutOfDomain { what: String, point: Vec<f64> },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("map is not a section: strictness residual {residual:e}")]
    NotASection { residual: f64 },
    #[error("second jet is not semiholonomic: residual {residual:e}")]
    NotSemiholonomic { residual: f64 },
    #[error("incompatible elements: source/target mismatch {residual:e}")]
    Incompatible { residual: f64 },
    #[error("degenerate frame: |det| = {det:e}")]
    DegenerateFrame { det: f64 },
    #[error("inversion failed: {0}")]
    InversionFailed(String),
    #[error("unknown built-in '{0}'")]
    UnknownBuiltin(String),
    #[error("rank drop: kernel dimension {found} differs from {expected}")]
    RankDrop { expected: usize, found: usize },
    #[error("trajectory left the chart at t = {t}")]
    LeftChart { t: f64 },
    #[error("lagrangian is not hyperregular: {0}")]
    NotHyperregular(String),
    #[error("newton iteration failed to converge: {0}")]
    NewtonFailed(String),
    #[error("region lies outside the grid: {0}")]
    RegionOutOfGrid(String),
    #[error("grid node {0:?} is a boundary point")]
    BoundaryPoint(Vec<usize>),
    #[error("generator '{name}' is not admissible: residual {residual:e}")]
    GeneratorNotAdmissible { name: String, residual: f64 },
    #[error("CFL violation: dt/dx = {ratio} exceeds {limit}")]
    CflViolation { ratio: f64, limit: f64 },
    #[error("non-finite field value at step {step}")]
    NonFiniteField { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GnkError>;

impl From<std::io::Error> for GnkError {
    fn from(e: std::io::Error) -> Self {
        GnkError::Io(e.to_string())
    }
}

impl From<toml::de::Error> for GnkError {
    fn from(e: toml::de::Error) -> Self {
        GnkError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for GnkError {
    fn from(e: serde_json::Error) -> Self {
        GnkError::Io(e.to_string())
    }
}
