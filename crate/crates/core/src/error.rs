use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate strand{}: {reason}", strand.map(|s| format!(" {s}")).unwrap_or_default())]
    DegenerateStrand {
        strand: Option<usize>,
        reason: String,
    },

    #[error("simulation diverged at {}substep {substep}, particle {particle}", frame.map(|f| format!("frame {f}, ")).unwrap_or_default())]
    SimulationDiverged {
        frame: Option<usize>,
        substep: usize,
        particle: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a strand index to a degenerate-strand error that lacks one.
    pub(crate) fn with_strand(self, index: usize) -> Self {
        match self {
            Error::DegenerateStrand { strand: None, reason } => Error::DegenerateStrand {
                strand: Some(index),
                reason,
            },
            other => other,
        }
    }

    /// Attaches a frame index to a divergence error.
    pub(crate) fn with_frame(self, index: usize) -> Self {
        match self {
            Error::SimulationDiverged {
                frame: None,
                substep,
                particle,
            } => Error::SimulationDiverged {
                frame: Some(index),
                substep,
                particle,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
