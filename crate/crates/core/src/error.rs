use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}: every axis must be at least 1")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every component must be finite and positive")]
    InvalidSpacing([f64; 3]),
    #[error("data length {actual} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("degenerate intensity range")]
    DegenerateRange,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("invalid label {value} at element {index}: labels must be non-negative integers")]
    InvalidLabel { index: usize, value: f64 },
    #[error("header {path}: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error("payload {path}: {msg}")]
    Payload { path: PathBuf, msg: String },
    #[error("unknown dtype tag `{0}` (expected f32, f64 or u16)")]
    UnknownDtype(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fractional transform axis length {0} is too short (need n >= 2)")]
    AxisTooShort(usize),
    #[error("eigensolver did not converge for axis length {0}")]
    EigenFailure(usize),
    #[error("vector length {actual} does not match plan length {expected}")]
    PlanLength { expected: usize, actual: usize },
    #[error("negative log-magnitude {value} at element {index}")]
    NegativeMagnitude { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape audit failed: {0}")]
    ShapeAudit(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("undefined distance: mask for label {0} is empty")]
    EmptyMask(u32),
    #[error("no foreground labels present")]
    NoForeground,
    #[error("non-finite {quantity} at voxel (z={z}, y={y}, x={x})")]
    NonFiniteAt {
        quantity: &'static str,
        z: usize,
        y: usize,
        x: usize,
    },
    #[error("optimization diverged at iteration {0}: loss is not finite")]
    Diverged(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
