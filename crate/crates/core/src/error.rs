use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while validating an annotation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub class_label: String,
    /// Position of the feature inside the class list, if the problem is feature-level.
    pub index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.class_label, i, self.message),
            None => write!(f, "{}: {}", self.class_label, self.message),
        }
    }
}

/// Coarse error category, used to pick HTTP status codes and process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad user input: empty texts, zero weights, malformed requests.
    Validation,
    /// A referenced video, class or revision does not exist.
    NotFound,
    /// Concurrent or out-of-date write.
    Conflict,
    /// Filesystem failure.
    Io,
    /// Data violates a structural contract: dimensions, corrupt files, degenerate datasets.
    Contract,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("text is empty")]
    EmptyText,
    #[error("no precomputed sentence vector for {0:?}; regenerate the embeddings file")]
    MissingPrecomputedEntry(String),
    #[error("label {0:?} has no ancestor present in the word table")]
    UnresolvableLabel(String),
    #[error("label hierarchy contains a cycle through {0:?}")]
    HierarchyCycle(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("frame list is empty")]
    EmptyFrameList,
    #[error("need {needed} distinct objects, only {available} observed")]
    TooFewObjects { needed: usize, available: usize },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("activation cache does not belong to the current network parameters")]
    StaleCache,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("dataset has a single class; negative pairs are impossible")]
    SingleClassDataset,
    #[error("class {0:?} has no annotated features")]
    NoFeatures(String),
    #[error("class {0:?} is annotated but missing from the baseline scores")]
    UnknownClassInVTMM(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("corrupt project: {0}")]
    CorruptProject(String),
    #[error("annotation validation failed: {}", format_diagnostics(.0))]
    ValidationFailed(Vec<Diagnostic>),
    #[error("unknown revision {0}")]
    UnknownRevision(u64),
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("project is locked by another writer ({0})")]
    ProjectLocked(PathBuf),
    #[error("revision conflict: edit based on {based_on}, active is {active}")]
    RevisionConflict { based_on: u64, active: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            EmptyText | MissingPrecomputedEntry(_) | ValidationFailed(_) | InvalidValue(_) | InvalidConfig(_) => {
                ErrorKind::Validation
            }
            UnknownRevision(_) | UnknownVideo(_) | UnknownClass(_) => ErrorKind::NotFound,
            ProjectLocked(_) | RevisionConflict { .. } => ErrorKind::Conflict,
            Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Contract,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }
}
