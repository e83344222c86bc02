//! File formats: annotation JSON, binary PGM rasters, run configuration,
//! and the manifest-driven file-backed detector.

mod annotations;
mod config;
mod detector;
mod pgm;

pub use annotations::{
    emit_annotations, parse_annotations, read_annotations, write_annotations, SCHEMA_VERSION,
};
pub use config::RunConfig;
pub use detector::FileViewDetector;
pub use pgm::{encode_pgm, parse_pgm, read_pgm, write_pgm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("reading {path}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("writing {path}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version `{0}` (expected `{1}`)")]
    SchemaVersion(String, &'static str),
    #[error("annotation {index} references unknown image `{image_id}`")]
    UnknownImage { index: usize, image_id: String },
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("annotation {index} on `{image_id}`: {reason}")]
    BadAnnotation {
        index: usize,
        image_id: String,
        reason: String,
    },
    #[error("{path}: not a PGM file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported PNM variant `{variant}` (only binary P5 is supported)")]
    UnsupportedVariant { path: String, variant: String },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: unsupported maxval {maxval} (must be 255)")]
    UnsupportedMaxval { path: String, maxval: u32 },
    #[error("{path}: expected {expected} pixel bytes, found {found}")]
    TruncatedData {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("view (flip {flip}, scale {scale}) listed twice in manifest")]
    DuplicateView { flip: String, scale: f64 },
}

fn json_error(e: &serde_json::Error) -> IoError {
    IoError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}
