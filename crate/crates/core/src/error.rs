//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("detector span {span:.4} smaller than image diagonal {diagonal:.4}")]
    Truncation { span: f64, diagonal: f64 },

    #[error("invalid stride: {m} does not divide {views} views")]
    InvalidStride { m: usize, views: usize },

    #[error("degenerate point cloud: all points coincide")]
    DegenerateCloud,

    #[error("point cloud too large: {n} points exceeds cap {cap}")]
    CloudTooLarge { n: usize, cap: usize },

    #[error("diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("batch norm evaluated before any training step")]
    UninitializedStats,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
