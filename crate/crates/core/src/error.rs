use thiserror::Error;

/// Errors raised by path algebra, model construction and experiment setup.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported matrix: {0}")]
    UnsupportedMatrix(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("node {node}: {source}")]
    AtNode { node: usize, source: Box<Error> },
    #[error("k={k}, rep={rep}: {source}")]
    AtReplication { k: u64, rep: u64, source: Box<Error> },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { field: field.into(), message: message.into() }
    }

    pub fn at_node(self, node: usize) -> Self {
        Error::AtNode { node, source: Box::new(self) }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
