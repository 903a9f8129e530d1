use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot embed empty text")]
    EmptyText,

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector has no direction; cosine is undefined")]
    ZeroVector,

    #[error("expected a non-empty list of embeddings")]
    EmptyEmbeddingList,

    #[error("embedder spec invalid: {0}")]
    InvalidEmbedderSpec(String),

    #[error("{n} agents exceeds the exact-enumeration guard of {max}")]
    TooManyAgents { n: usize, max: usize },

    #[error("alignment violation: <r_{agent}, r_avg> = 0, approximation constant undefined")]
    AlignmentViolation { agent: usize },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("infeasible cluster geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("round 0 prompts must not carry peer responses")]
    CollabInRoundZero,

    #[error("agent {agent} (round {round}): {source}")]
    AgentCall {
        agent: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("http transport failure: {0}")]
    Transport(String),

    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("malformed service response: {0}")]
    MalformedResponse(String),

    #[error("config field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{path}:{line}: malformed query record: {message}")]
    QueryRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate query id `{id}` at lines {first_line} and {line}")]
    DuplicateQueryId {
        id: String,
        first_line: usize,
        line: usize,
    },

    #[error("output already exists at {0}; pass overwrite to replace it")]
    OutputExists(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach agent/round context to an error bubbling out of an agent call.
    pub fn in_agent_call(self, agent: usize, round: usize) -> Self {
        Error::AgentCall {
            agent,
            round,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
