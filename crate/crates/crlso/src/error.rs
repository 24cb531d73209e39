/// Errors surfaced by the search-space, model, and experiment layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A graph violates structural constraints (cycles, duplicate edges, ...).
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    /// A search-space definition is inconsistent.
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    /// A record in a JSON-lines file failed to parse or validate.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// The space cannot be exhaustively enumerated.
    #[error("unsupported enumeration: {0}")]
    UnsupportedEnumeration(String),
    /// A configuration key is missing, unknown, or out of range.
    #[error("config error: {0}")]
    Config(String),
    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),
    /// An oracle was queried for an architecture it does not cover.
    #[error("lookup error: {0}")]
    Lookup(String),
    /// The decoder produced a graph that cannot be repaired into the space.
    #[error("decode produced an invalid architecture: {0}")]
    DecodeInvalid(String),
    /// A checkpoint does not match the requested space or model dimensions.
    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),
    /// Correlation is undefined (zero variance input).
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    /// Cosine similarity is undefined (zero vector).
    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),
    /// Propagated tensor-engine failure.
    #[error(transparent)]
    Autodiff(#[from] ndgrad::NdError),
    /// Filesystem failure with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidGraph(_)
            | Error::InvalidSpace(_)
            | Error::Parse { .. }
            | Error::UnsupportedEnumeration(_)
            | Error::Data(_)
            | Error::Lookup(_)
            | Error::CheckpointMismatch(_)
            | Error::Io { .. } => 3,
            Error::DecodeInvalid(_)
            | Error::UndefinedCorrelation(_)
            | Error::UndefinedSimilarity(_)
            | Error::Autodiff(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
