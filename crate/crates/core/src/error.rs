use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn from_json(err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = err.path().to_string();
        let inner = err.into_inner();
        Error::Schema {
            path,
            msg: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        }
    }
}

/// Deserializes a JSON document, reporting the failing field path.
pub(crate) fn json_from_str<D: serde::de::DeserializeOwned>(text: &str) -> Result<D> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(Error::from_json)
}
