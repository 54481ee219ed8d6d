use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt input: {0}")]
    CorruptInput(String),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("unsupported axis count {0}, expected one of 3, 4, 6, 10")]
    UnsupportedAxisCount(usize),
    #[error("invalid axis: {0}")]
    InvalidAxis(String),
    #[error("point lies {distance:.6} mm off the slice plane (slab {slab:.6} mm)")]
    OffPlane { distance: f64, slab: f64 },
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("no positive prompts")]
    NoPositivePrompts,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
