use std::io;
use std::path::PathBuf;

use crate::transport::EndpointId;

/// Errors raised while decoding a serialized checkpoint entry.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("record too short ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("type mismatch: record holds {found}, target expects {expected}")]
    TypeMismatch { expected: String, found: String },
    #[error("dimension mismatch: record holds {found:?}, target expects {expected:?}")]
    DimensionMismatch { expected: (u64, u64, i64), found: (u64, u64, i64) },
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Corrupt { stored: u32, computed: u32 },
    #[error("malformed record: {0}")]
    Malformed(String),
}

/// Failures observed on a process group.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommError {
    #[error("process failure detected: {0:?}")]
    ProcFailed(Vec<EndpointId>),
    #[error("process group revoked")]
    Revoked,
    /// The calling process itself has been killed.
    #[error("this process was killed")]
    Killed,
    #[error("no process can make progress")]
    Deadlock,
    #[error("evicted from the recovered group")]
    Evicted,
    #[error("spawner died before handing over a group")]
    Orphaned,
    /// A peer left the group with an error it could not recover from.
    #[error("a peer abandoned the group")]
    Abandoned,
    #[error("transport disconnected: {0}")]
    Disconnected(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl CommError {
    /// True for the failures the fault-tolerance layer recovers from.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, CommError::ProcFailed(_) | CommError::Revoked)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CraftError {
    #[error("invalid checkpoint name {0:?}")]
    InvalidName(String),
    #[error("invalid entry key {0:?}")]
    InvalidKey(String),
    #[error("duplicate entry key {0:?}")]
    DuplicateKey(String),
    #[error("checkpoint {0:?} is already committed")]
    AlreadyCommitted(String),
    #[error("checkpoint {0:?} is not committed")]
    NotCommitted(String),
    #[error("checkpoint {0:?} has no entries")]
    EmptyCheckpoint(String),
    #[error("checkpoint {0:?} already exists under this base path")]
    DuplicateCheckpoint(String),
    #[error("registering {child:?} under {parent:?} would create a cycle")]
    Cycle { parent: String, child: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("storage error: {0}")]
    Storage(String),
    /// Raised by the fault-injecting filesystem when its byte budget runs out.
    #[error("injected crash")]
    InjectedCrash,
    #[error("version {got} cannot follow latest version {latest}")]
    VersionOrder { latest: u64, got: u64 },
    #[error("unrecoverable: {0}")]
    Unrecoverable(String),
    #[error("background write failed: {0}")]
    WriteFailed(String),
    #[error(transparent)]
    Comm(#[from] CommError),
}

impl CraftError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CraftError::Io { path: path.into(), source }
    }

    /// The communication failure carried by this error, if any.
    pub fn comm(&self) -> Option<&CommError> {
        match self {
            CraftError::Comm(c) => Some(c),
            _ => None,
        }
    }
}

pub type Result<T, E = CraftError> = std::result::Result<T, E>;
