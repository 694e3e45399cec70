use thiserror::Error;

/// Errors raised while building or running an iHDG discretization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0} (expected 1..=16)")]
    InvalidOrder(usize),
    #[error("invalid spatial dimension {0} (expected 1, 2 or 3)")]
    InvalidDimension(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("flux scheme {flux} is not supported for the {model} model")]
    UnsupportedFlux { flux: String, model: String },
    #[error("normal vector is not unit length (|n| = {0})")]
    NonUnitNormal(f64),
    #[error("singular local operator on element {element}")]
    SingularLocalOperator { element: usize },
    #[error("singular global system")]
    SingularSystem,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("problem too large for the dense oracle: {unknowns} unknowns (cap {cap})")]
    TooLarge { unknowns: usize, cap: usize },
    #[error("characteristic face {face}: stabilization sum vanishes")]
    DegenerateFace { face: usize },
    #[error("no closed-form interior solution for experiment {0}")]
    NoInteriorSolution(String),
    #[error("layer peeling stalled with {remaining} elements left (recirculating flow)")]
    PeelingStalled { remaining: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
