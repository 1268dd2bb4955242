use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("direction vector is degenerate (norm {0:e})")]
    DegenerateDirection(f64),
    #[error("primitive centers coincide (distance {0:e})")]
    CoincidentCenters(f64),
    #[error("point lies behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("forward buffers do not match the scene being differentiated")]
    BufferMismatch,
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("pair set is empty")]
    EmptyPairSet,
    #[error("need at least {needed} primitives, have {have}")]
    TooFewPrimitives { needed: usize, have: usize },
    #[error("requested {requested} centers from {available} primitives")]
    InsufficientPrimitives { requested: usize, available: usize },
    #[error("patch needs {needed} ground-truth samples, have {have}")]
    InsufficientGroundTruth { needed: usize, have: usize },
    #[error("model has no primitives")]
    EmptyModel,
    #[error("boundary set is empty")]
    EmptyBoundary,
    #[error("point set is empty")]
    EmptySet,
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("no depth returns available for initialization")]
    EmptyInitialization,
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mesh parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
