use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("the three plane points are collinear")]
    DegeneratePlane,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("class {class} has {count} training samples, at least 2 are required")]
    EmptyClass { class: usize, count: usize },

    #[error("training features contain OOD rows")]
    ContainsOodRows,

    #[error("unknown class {class} (class count {class_count})")]
    UnknownClass { class: usize, class_count: usize },

    #[error("label smoothing epsilon {0} is outside [0, 1)")]
    EpsilonOutOfRange(f64),

    #[error("label {label} is out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("cannot split {n} samples into {k} folds")]
    TooFewSamples { n: usize, k: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no samples in the {0} group")]
    EmptyGroup(&'static str),

    #[error("all scores are identical; histogram range is degenerate")]
    DegenerateRange,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse grouping of errors, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Context { source, .. } => source.kind(),
            Error::ConfigInvalid(_) | Error::EpsilonOutOfRange(_) => ErrorKind::Config,
            Error::NotPositiveDefinite { .. }
            | Error::NotSymmetric { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFinite(_)
            | Error::DegeneratePlane
            | Error::DegenerateRange => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
