use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0} (supported: 1, 2, 3)")]
    UnsupportedDimension(usize),

    #[error("shape entry {got} along axis {axis} is below the minimum of 4")]
    ShapeTooSmall { axis: usize, got: usize },

    #[error("spacing must be positive and finite, got {0}")]
    BadSpacing(f64),

    #[error("field length {got} does not match grid node count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("degenerate ball: radius {radius} is below the grid spacing {spacing}")]
    DegenerateBall { radius: f64, spacing: f64 },

    #[error("derivative order {got} exceeds the supported maximum {max}")]
    OrderTooHigh { got: usize, max: usize },

    #[error("multi-index length {got} does not match grid dimension {expected}")]
    BadMultiIndex { expected: usize, got: usize },

    #[error("exponent p = {0} is outside [1, inf)")]
    BadExponent(f64),

    #[error("kernel order alpha = {alpha} is outside (0, {dim})")]
    BadKernelOrder { alpha: f64, dim: usize },

    #[error("kernel evaluated at zero distance")]
    KernelSingularity,

    #[error("density has a negative entry at node {node}")]
    NegativeDensity { node: usize },

    #[error("radius ladder invalid: {0}")]
    BadLadder(String),

    #[error("region is empty or has fewer than {needed} usable nodes")]
    InsufficientNodes { needed: usize },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("parts do not cover the target set ({missing} nodes uncovered)")]
    CoverViolation { missing: usize },

    #[error(
        "truncation level {level} needs threshold {required} above the cap {cap}"
    )]
    ThresholdUnachievable { level: usize, required: f64, cap: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
