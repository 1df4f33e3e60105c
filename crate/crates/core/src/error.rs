use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("composition is identically zero (disjoint supports)")]
    DisjointSupport,

    #[error("ratio is unbounded at state {index}: denominator vanishes where numerator is positive")]
    UnboundedRatio { index: usize },

    #[error("weights are not on the probability simplex: {0}")]
    BadWeights(String),

    #[error("observation list is empty")]
    EmptyObservations,

    #[error("observation label {label} out of range for {num_bases} bases")]
    LabelOutOfRange { label: usize, num_bases: usize },

    #[error("parameter alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("invalid density table: {0}")]
    InvalidTable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("at {path}: {source}")]
    AtPath {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value detected in {0}")]
    NonFiniteDetected(String),

    #[error("base policies do not realize the given distributions (L1 = {l1:e})")]
    InconsistentBases { l1: f64 },

    #[error("classifier assigns zero probability to the observations at state {state}")]
    ZeroObservationProbability { state: usize },

    #[error("all label densities underflow at the query point")]
    AllZeroDensity,

    #[error("quadrature failed to converge within {nodes} nodes")]
    QuadratureNonConvergence { nodes: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Wraps `self` with an AST path, keeping the innermost path when nested.
    pub fn at_path(self, path: &str) -> Error {
        match self {
            e @ Error::AtPath { .. } => e,
            other => Error::AtPath {
                path: path.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// The error with any path wrapper removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPath { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
