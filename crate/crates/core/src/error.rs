use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("loss node is not a scalar (shape {0:?})")]
    NotScalar([usize; 2]),
    #[error("node {0} is not a differentiable leaf of this graph")]
    NotALeaf(usize),
    #[error("unknown property tag `{0}`")]
    UnknownTag(String),
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("no trainable triples")]
    EmptyTriples,
    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("missing pretrained vector for entity or relation `{0}`")]
    MissingVector(String),
    #[error("class `{0}` has no rows")]
    EmptyClass(String),
    #[error("invalid file format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
