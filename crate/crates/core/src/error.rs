//! Error taxonomy shared by the library and the CLI.
//!
//! Every fatal error maps onto one of three process exit codes:
//!
//! * 1: input errors (unreadable files, malformed content, bad config)
//! * 2: invariant violations (readable input that contradicts the data model)
//! * 3: internal errors (bugs, not caller mistakes)
//!
//! Exit code 0 is reserved for success.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// Too much of an input file failed to parse to trust the rest.
    #[error("{path}: {bad} of {total} lines malformed (limit 10%); first offenders: {}", summarize_lines(.lines))]
    MalformedInput {
        path: PathBuf,
        bad: usize,
        total: usize,
        lines: Vec<usize>,
    },

    /// Lines in a curated input file that do not follow its format.
    #[error("{path}: {what} on line(s) {}", summarize_lines(.lines))]
    RejectedLines {
        path: PathBuf,
        what: String,
        lines: Vec<usize>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage}: missing required input: {what}")]
    MissingInput { stage: String, what: String },

    /// Input parsed fine but contradicts a documented data-model invariant.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl AuditError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Io { .. }
            | AuditError::Parse { .. }
            | AuditError::MalformedInput { .. }
            | AuditError::RejectedLines { .. }
            | AuditError::Config(_)
            | AuditError::MissingInput { .. } => 1,
            AuditError::Invariant(_) => 2,
            AuditError::Internal(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io { path: path.into(), source }
    }
}

fn summarize_lines(lines: &[usize]) -> String {
    const SHOWN: usize = 20;
    let mut s = lines
        .iter()
        .take(SHOWN)
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if lines.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", lines.len() - SHOWN));
    }
    s
}

pub type Result<T> = std::result::Result<T, AuditError>;
