use alloc::string::String;

/// Errors raised by the numerical kernels.
#[derive(Clone, Debug, thiserror::Error, PartialEq)]
pub enum Error {
    #[error("total multiplicities differ: {0} vs {1}")]
    MismatchedQ(usize, usize),
    #[error("open books do not share a spine")]
    MismatchedSpine,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    MismatchedDimension { expected: usize, got: usize },
    #[error("invalid spine: {0}")]
    InvalidSpine(String),
    #[error("invalid open book: {0}")]
    InvalidBook(String),
    #[error("point lies on the spine")]
    OnSpine,
    #[error("two sheets coincide")]
    DegenerateAngles,
    #[error("no samples inside the ball")]
    EmptyBall,
    #[error("current has no samples")]
    EmptyCurrent,
    #[error("current carries no tangent planes")]
    MissingTangents,
    #[error("measures have different total mass: {0} vs {1}")]
    UnbalancedMass(f64, f64),
    #[error("graph does not vanish on the spine (|g| = {0})")]
    NonVanishingOnSpine(f64),
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("multiplicities cannot be rounded to Q = {0}")]
    MultiplicityMismatch(usize),
    #[error("ambiguous sheet matching between adjacent nodes (margin ratio {0:.3})")]
    SheetAmbiguity(f64),
    #[error("spherical height vanishes at radius {0}")]
    VanishingHeight(f64),
    #[error("boundary data cannot be separated into sheets")]
    NonSeparableBoundary,
    #[error("Dirichlet energy vanishes on the blowup ball")]
    ZeroEnergy,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("layer subdivision failed to satisfy its conditions")]
    LayerConditions,
    #[error("iterative solver did not converge (residual {0:e})")]
    NoConvergence(f64),
}

pub type Result<T> = core::result::Result<T, Error>;
