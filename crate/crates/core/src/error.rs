use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("size mismatch for {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("label value {value} at voxel {index} is not below num_classes {num_classes}")]
    LabelOutOfRange {
        value: u32,
        index: usize,
        num_classes: usize,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("geometry or class-count mismatch: {0}")]
    Mismatch(String),

    #[error("degenerate intensity scale: interquartile range {iqr} is below 1e-9")]
    DegenerateScale { iqr: f64 },

    #[error("view constraint infeasible: {0}")]
    InfeasibleViews(String),

    #[error("phantom gap enforcement emptied class {class}")]
    InfeasibleGap { class: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plugin exited with {status}: {stderr}")]
    PluginFailed { status: String, stderr: String },

    #[error("plugin timed out after {seconds} s")]
    PluginTimeout { seconds: f64 },

    #[error("protocol error for entry {id:?}: {reason}")]
    Protocol { id: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures attributable to an external segmenter process.
    pub fn is_plugin_error(&self) -> bool {
        matches!(
            self,
            Error::PluginFailed { .. } | Error::PluginTimeout { .. } | Error::Protocol { .. }
        )
    }
}
