//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {got} samples, need at least {need}")]
    SignalTooShort { need: usize, got: usize },

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz; pass --resample to convert)")]
    SampleRate { expected: u32, got: u32 },

    #[error("unsupported wav encoding: {0}")]
    WavEncoding(String),

    #[error("degenerate label set: need at least 2 distinct labels, got {0}")]
    DegenerateLabelSet(usize),

    #[error("too few samples: {0}")]
    TooFewSamples(usize),

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples for stratified halving: class {class} has {count} samples")]
    InsufficientClassSamples { class: u32, count: usize },

    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("label set too small: {0} labels")]
    LabelSetTooSmall(usize),

    #[error("label tree error at node with labels {labels:?}: {source}")]
    TreeNode {
        labels: Vec<u32>,
        #[source]
        source: Box<Error>,
    },

    #[error("no samples for split node with labels {0:?}")]
    EmptyNodeSamples(Vec<u32>),

    #[error("channel mismatch: model trained on {expected}, segment matrix is {got}")]
    ChannelMismatch { expected: String, got: String },

    #[error("image longer than target: T={got} > {target}")]
    ImageTooLong { got: usize, target: usize },

    #[error("channel stack error: {0}")]
    ChannelStack(String),

    #[error("class {0} absent from a cross-validation training split")]
    ClassMissingFromSplit(String),

    #[error("negative entry {value} at index {index} in nonnegative vector")]
    NegativeEntry { index: usize, value: f64 },

    #[error("mean chi-square distance must be positive, got {0}")]
    NonPositiveMeanDistance(f64),

    #[error("gram matrix is not symmetric: |K[{i},{j}] - K[{j},{i}]| = {diff}")]
    AsymmetricGram { i: usize, j: usize, diff: f64 },

    #[error("SMO did not converge within {max_iter} iterations (KKT residual {residual})")]
    SmoNonConvergence { max_iter: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty feature map")]
    EmptyFeatureMap,

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("image time axis too short: T={t} < filter width {width}")]
    ImageTooShort { t: usize, width: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("duplicate recording id: {0}")]
    DuplicateId(String),

    #[error("missing audio files for ids: {0:?}")]
    MissingFiles(Vec<String>),

    #[error("prediction/truth length mismatch: {predictions} vs {truth}")]
    LengthMismatch { predictions: usize, truth: usize },

    #[error("tensor format error: {0}")]
    TensorFormat(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
