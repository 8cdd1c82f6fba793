use thiserror::Error;

/// Shape incompatibilities, with the offending axis where one exists.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op}: shapes {lhs:?} and {rhs:?} disagree on axis {axis} ({a} vs {b})")]
    Axis {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
        axis: usize,
        a: usize,
        b: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Other { op: &'static str, detail: String },
}

/// Broad failure category, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

/// Umbrella error for pipeline-level code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Edf(#[from] crate::signal::EdfError),
    #[error(transparent)]
    Summary(#[from] crate::signal::SummaryError),
    #[error(transparent)]
    Synth(#[from] crate::signal::SynthError),
    #[error(transparent)]
    Epoch(#[from] crate::epoching::EpochError),
    #[error(transparent)]
    Graph(#[from] crate::autodiff::GraphError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use crate::models::ModelError;
        use crate::training::TrainError;
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Model(ModelError::InvalidConfig(_)) => ErrorKind::Config,
            Error::Model(ModelError::NonFinite { .. }) => ErrorKind::Numerical,
            Error::Train(TrainError::Diverged { .. })
            | Error::Train(TrainError::NonFiniteGradient { .. }) => ErrorKind::Numerical,
            Error::Graph(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
