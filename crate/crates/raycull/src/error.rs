//! Crate-wide error type. Parse-level errors live next to their parsers;
//! this wraps them with file context and adds the cross-file consistency
//! failures.

use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;
use crate::dataset::FormatError;
use crate::metrics::MetricsError;
use crate::synth::ScriptError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("{path}: {source}")]
    Script {
        path: PathBuf,
        #[source]
        source: ScriptError,
    },
    #[error("frame {frame}: {labels} labels for {points} scan points")]
    LabelCount {
        frame: usize,
        labels: usize,
        points: usize,
    },
    #[error("frame {frame}: {preds} predicted labels for {points} scan points")]
    PredCount {
        frame: usize,
        preds: usize,
        points: usize,
    },
    #[error("{scans} scan files but only {poses} pose lines")]
    PoseCount { scans: usize, poses: usize },
    #[error("frame range {start}:{end} is empty or out of bounds ({available} frames available)")]
    BadFrameRange {
        start: usize,
        end: usize,
        available: usize,
    },
    #[error("missing prediction files for frames {0:?}")]
    MissingPredictions(Vec<usize>),
    #[error("no frames processed")]
    NoFrames,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl Error {
    pub fn path(&self) -> Option<&PathBuf> {
        match self {
            Error::Io { path, .. }
            | Error::Format { path, .. }
            | Error::Config { path, .. }
            | Error::Script { path, .. } => Some(path),
            _ => None,
        }
    }
}
