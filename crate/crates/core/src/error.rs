use std::path::PathBuf;

use thiserror::Error;

use crate::distributed::DistributedReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Cluster-topology problems, each with its own stable code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("cluster has no master task")]
    NoMaster,
    #[error("duplicate master")]
    DuplicateMaster,
    #[error("duplicate address {0}")]
    DuplicateAddress(String),
    #[error("duplicate task {role}:{index}")]
    DuplicateTask { role: String, index: u32 },
    #[error("workers require a parameter server")]
    WorkerWithoutPs,
    #[error("this_task {index} is out of range for {len} tasks")]
    ThisTaskOutOfRange { index: usize, len: usize },
    #[error("invalid address {0:?}, expected host:port")]
    BadAddress(String),
}

impl ClusterError {
    pub fn code(&self) -> &'static str {
        match self {
            ClusterError::NoMaster => "cluster.no_master",
            ClusterError::DuplicateMaster => "cluster.duplicate_master",
            ClusterError::DuplicateAddress(_) => "cluster.duplicate_address",
            ClusterError::DuplicateTask { .. } => "cluster.duplicate_task",
            ClusterError::WorkerWithoutPs => "cluster.worker_without_ps",
            ClusterError::ThisTaskOutOfRange { .. } => "cluster.this_task_out_of_range",
            ClusterError::BadAddress(_) => "cluster.bad_address",
        }
    }
}

/// Failure codes for distributed runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributedErrorCode {
    Transport,
    SyncTimeout,
    Worker,
    Protocol,
}

impl DistributedErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistributedErrorCode::Transport => "distributed.transport",
            DistributedErrorCode::SyncTimeout => "distributed.sync_timeout",
            DistributedErrorCode::Worker => "distributed.worker",
            DistributedErrorCode::Protocol => "distributed.protocol",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid cluster: {0}")]
    Cluster(#[from] ClusterError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at offset {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training error at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("stale gradient: computed against step {basis_step}, server is at step {current_step}")]
    StaleGradient { basis_step: u64, current_step: u64 },

    #[error("{}: {message}", code.as_str())]
    Distributed {
        code: DistributedErrorCode,
        message: String,
        partial: Box<DistributedReport>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::State(_) => "state",
            Error::UnknownKey(_) => "config.unknown_key",
            Error::Config(_) => "config",
            Error::Cluster(c) => c.code(),
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Crc { .. } => "format.crc",
            Error::Version { .. } => "format.version",
            Error::Training { .. } => "training",
            Error::StaleGradient { .. } => "distributed.stale_gradient",
            Error::Distributed { code, .. } => code.as_str(),
            Error::Transport(_) => "transport",
            Error::Internal(_) => "internal",
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Validation(_)
                | Error::Parse { .. }
                | Error::UnknownKey(_)
                | Error::Config(_)
                | Error::Cluster(_)
                | Error::Version { .. }
        )
    }
}
