//! Error types shared across the crate, grouped by subsystem.

use thiserror::Error;

/// Errors from Gaussian container validation and activation.
#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("gaussian {index}: rotation quaternion has zero norm")]
    DegenerateRotation { index: usize },
    #[error("gaussian {index}: non-finite value in field {field}")]
    NonFinite { index: usize, field: &'static str },
    #[error("field {field} has length {got}, expected {expected}")]
    ShapeMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("sh coefficient width {got} does not match degree {degree} (expected {expected})")]
    ShWidth {
        got: usize,
        degree: usize,
        expected: usize,
    },
}

/// Errors from checkpoint (PLY) parsing and serialization.
#[derive(Debug, Error)]
pub enum PlyError {
    #[error("byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("byte {offset}: format must be binary_little_endian 1.0, found {found:?}")]
    UnsupportedFormat { offset: usize, found: String },
    #[error("byte {offset}: unknown property {name:?}")]
    UnknownProperty { offset: usize, name: String },
    #[error("missing property {name:?} in header")]
    MissingProperty { name: String },
    #[error("byte {offset}: property {name:?} must be float32, found {found:?}")]
    NonFloatProperty {
        offset: usize,
        name: String,
        found: String,
    },
    #[error("body truncated: expected {expected} bytes after header, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("sh rest coefficient count {count} does not correspond to an integer degree")]
    BadShCount { count: usize },
}

/// Errors from scene-dataset loading and writing.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("camera manifest {path}: {message}")]
    BadManifest { path: String, message: String },
    #[error("view {image}: listed in manifest but file is missing")]
    MissingView { image: String },
    #[error("view {image}: image is {got_w}x{got_h}, manifest says {want_w}x{want_h}")]
    ResolutionMismatch {
        image: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("point cloud {path}: {message}")]
    BadPointCloud { path: String, message: String },
    #[error(transparent)]
    Ply(#[from] PlyError),
}

/// Errors from rendering.
#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("gaussian {index}: non-finite projected quantity {what}")]
    NonFinite { index: usize, what: &'static str },
    #[error("aux does not match this render call: {what}")]
    AuxMismatch { what: &'static str },
    #[error("gradient image is {got_w}x{got_h}, render target is {want_w}x{want_h}")]
    GradShape {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Errors from key embedding and decoding.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("key is empty")]
    EmptyKey,
    #[error("key must be 16 alphanumeric ASCII characters, got {got:?}")]
    InvalidKey { got: String },
    #[error("decoder was built for sh width {expected}, set has {got}")]
    ShWidthMismatch { expected: usize, got: usize },
    #[error("key embedding dimension {got} does not match decoder ({expected})")]
    KeyDimMismatch { expected: usize, got: usize },
    #[error("normalization record has {got} channels, set needs {expected}")]
    RecordMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("checkpoint: {message}")]
    BadCheckpoint { message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from metrics and the security-evaluation suite.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("images differ in shape: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ImageShape {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },
    #[error("histograms must share bin count: {a} vs {b}")]
    BinMismatch { a: usize, b: usize },
    #[error("histogram mass must sum to 1 within 1e-9, got {sum}")]
    NotNormalized { sum: f64 },
    #[error("histogram has a negative bin")]
    NegativeMass,
    #[error("need at least one positive and one negative label")]
    SingleClass,
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LabelShape { scores: usize, labels: usize },
    #[error("empty gaussian set")]
    EmptySet,
    #[error("prune ratio {ratio} is outside [0, 1)")]
    BadRatio { ratio: f64 },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Errors from dataset assembly and the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("combined dataset has no views")]
    EmptyDataset,
    #[error("scene has no ground-truth source for pose {pose}: no image and no pretrained model")]
    UnfillablePose { pose: usize },
    #[error("config: {message}")]
    BadConfig { message: String },
    #[error("iteration {iteration}: non-finite loss ({component})")]
    NonFiniteLoss {
        iteration: usize,
        component: &'static str,
    },
    #[error("keys must be distinct and one per secret scene: {message}")]
    BadKeys { message: String },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
