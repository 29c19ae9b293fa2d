use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point sits at or behind the source plane of a view.
    #[error("point depth {depth} is not in front of the source (floor {floor})")]
    NonPositiveDepth { depth: f64, floor: f64 },

    #[error("histogram is degenerate: all {count} values equal {value}")]
    DegenerateHistogram { count: usize, value: f64 },

    #[error("mask is empty: no voxel passes threshold {threshold}")]
    EmptyMask { threshold: f64 },

    #[error("non-finite loss at iteration {iteration} (view {view}, angle {angle} rad)")]
    NonFiniteLoss {
        iteration: usize,
        view: usize,
        angle: f64,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid of {dims:?} voxels overflows addressable memory")]
    GridOverflow { dims: [usize; 3] },

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
