use thiserror::Error;

use crate::ndd::TreeViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("closure undefined: all counts are zero and smoothing is 0")]
    EmptyClosure,

    #[error("composition invalid: {0}")]
    InvalidComposition(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("point on the simplex boundary with alpha < 1 at component {0}")]
    BoundaryPoint(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("group {0:?} has no observations")]
    EmptyGroup(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("invalid tree: {}", format_violations(.0))]
    InvalidTree(Vec<TreeViolation>),

    #[error("layer {node:?}: {source}")]
    Layer {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_layer(self, node: impl Into<String>) -> Self {
        Error::Layer {
            node: node.into(),
            source: Box::new(self),
        }
    }
}

fn format_violations(v: &[TreeViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
