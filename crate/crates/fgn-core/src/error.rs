use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("matmul dimension mismatch: {m}x{k} times {k2}x{n}")]
    MatmulMismatch { m: usize, k: usize, k2: usize, n: usize },

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward called without a forward record")]
    EmptyRecord,

    #[error("channel mismatch: input has {input} channels, layer expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },

    #[error("{axis} axis of length {len} is not divisible by pooling window {window}")]
    PoolNotDivisible {
        axis: &'static str,
        len: usize,
        window: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("gate values must lie in [0,1], found {0}")]
    GateOutOfRange(f64),

    #[error("input shape {actual:?} does not match expected {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("poly_sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("invalid flow parameters: {0}")]
    FlowParams(String),

    #[error("flow inputs differ in size: {0}x{1} vs {2}x{3}")]
    FlowSizeMismatch(usize, usize, usize, usize),

    #[error("image {width}x{height} is smaller than crop side {side}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        side: usize,
    },

    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),

    #[error("motion intensity map needs at least one flow field")]
    EmptyFlowList,

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("clip {0} has no assigned split; run the split step first")]
    UnassignedSplit(String),

    #[error("checkpoint variant {found} does not match expected {expected}")]
    VariantMismatch { expected: String, found: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("bad sample cache file: {0}")]
    SampleCache(String),

    #[error("bad config: {0}")]
    Config(String),

    #[error("bad manifest: {0}")]
    Manifest(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
