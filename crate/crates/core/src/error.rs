use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing required field `{field}`")]
    MissingField { path: String, field: String },
    #[error("{path}: non-finite value in element {index} (field `{field}`)")]
    NonFinite {
        path: String,
        index: usize,
        field: String,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("simulation fault at substep {substep}: {msg}")]
    SimFault { substep: usize, msg: String },
    #[error("registration failed: {0}")]
    Registration(String),
    #[error("rank-deficient design matrix in channel {channel}")]
    RankDeficient { channel: String },
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("unmatched episode ids: {0:?}")]
    UnmatchedEpisodes(Vec<String>),
    #[error("reset fault: {0}")]
    ResetFault(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("policy protocol error: {0}")]
    Policy(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
