use thiserror::Error;

/// Errors produced by lattice, model, and training operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A text-format parse failed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An operation was handed a lattice that fails validation.
    #[error("invalid lattice{}: {msg}", fmt_utt(.utt_id))]
    InvalidLattice { utt_id: String, msg: String },

    /// The lattice contains a directed cycle.
    #[error("lattice{} contains a cycle", fmt_utt(.utt_id))]
    Cycle { utt_id: String },

    /// No path from the start state to a final state exists.
    #[error("lattice{} has no complete path", fmt_utt(.utt_id))]
    NoCompletePath { utt_id: String },

    /// An argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A checkpoint file is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_utt(utt_id: &str) -> String {
    if utt_id.is_empty() {
        String::new()
    } else {
        format!(" '{utt_id}'")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for parse errors.
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Convenience constructor for invalid-lattice errors.
    pub fn invalid_lattice(utt_id: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidLattice {
            utt_id: utt_id.into(),
            msg: msg.into(),
        }
    }
}
