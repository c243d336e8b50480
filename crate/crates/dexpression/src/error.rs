use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("spatial mismatch: {h_a}x{w_a} vs {h_b}x{w_b}")]
    SpatialMismatch { h_a: usize, w_a: usize, h_b: usize, w_b: usize },

    #[error("channel mismatch: layer expects {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("degenerate output: kernel {kernel} exceeds padded input extent {padded}")]
    DegenerateOutput { kernel: usize, padded: usize },

    #[error("dimension mismatch: expected {expected} elements, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape conflict between '{producer}' and '{consumer}': {detail}")]
    ShapeConflict { producer: String, consumer: String, detail: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid target class {target} for {num_classes} classes")]
    InvalidTarget { target: usize, num_classes: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("too few samples: {n_samples} samples cannot fill {k} folds")]
    TooFewSamples { n_samples: usize, k: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("class directory '{0}' contains no images")]
    EmptyClass(String),

    #[error("dataset root contains no class directories")]
    NoClasses,

    #[error("too few frames: need at least {needed}, sequence has {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("unreadable file '{path}': {detail}")]
    UnreadableFile { path: String, detail: String },

    #[error("unsupported image format: '{0}'")]
    UnsupportedFormat(String),

    #[error("checkpoint version mismatch: file has {got}, expected {expected}")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint missing tensor '{0}'")]
    MissingTensor(String),

    #[error("class count mismatch: checkpoint has {checkpoint}, requested {requested}")]
    ClassCountMismatch { checkpoint: usize, requested: usize },

    #[error("unknown layer '{name}'; valid layers: {valid}")]
    UnknownLayer { name: String, valid: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
