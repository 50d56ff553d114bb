use thiserror::Error;

/// Failure modes across the perception / risk / simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    /// The viewing ray for this pixel runs parallel to or away from the
    /// ground plane (at or above the horizon row).
    #[error("pixel ({u:.2}, {v:.2}) has no ground intersection")]
    NoGroundIntersection { u: f64, v: f64 },

    /// Projection target lies behind the image plane.
    #[error("point ({x:.2}, {y:.2}) m projects behind the camera")]
    BehindCamera { x: f64, y: f64 },

    #[error("empty region of interest: {0}")]
    EmptyRoi(String),

    #[error("kernel radius {radius} px truncates the filter; need at least {required} px")]
    KernelTruncation { radius: usize, required: usize },

    #[error("curve parameter t={0} outside [0, 1]")]
    CurveDomain(f64),

    #[error("degenerate chord parameterization (repeated sample position)")]
    DegenerateParameterization,

    #[error("sample count {got} below the {need} needed for an order-{order} fit")]
    TooFewSamples { got: usize, need: usize, order: usize },

    #[error("covariance is not invertible (det = {0:.3e})")]
    SingularCovariance(f64),

    #[error("image error: {0}")]
    Image(String),

    #[error("message decode: {0}")]
    Decode(String),

    /// One entry per violated constraint, already formatted.
    #[error("invalid scenario:\n{0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
