use std::io;

/// Errors produced anywhere in the cache pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("evaluator unavailable: {0}")]
    EvaluatorUnavailable(String),

    #[error("coherence score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    /// The evaluator failed part-way through gating candidate `rank`.
    #[error("gate aborted at candidate {rank}: {source}")]
    Gate {
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("generator failure: {0}")]
    GeneratorFailure(String),

    /// The vector has zero norm and cannot be normalized.
    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("invalid UTF-8 on line {line}")]
    Encoding { line: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True when a model component (encoder, evaluator or generator) failed to answer.
    pub fn is_unavailable(&self) -> bool {
        match self {
            Error::EncoderUnavailable(_) | Error::EvaluatorUnavailable(_) | Error::GeneratorFailure(_) => true,
            Error::Gate { source, .. } => source.is_unavailable(),
            _ => false,
        }
    }

    /// Stable snake_case code for logs and API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EncoderUnavailable(_) => "encoder_unavailable",
            Error::EvaluatorUnavailable(_) => "evaluator_unavailable",
            Error::ScoreOutOfRange(_) => "score_out_of_range",
            Error::Gate { source, .. } => source.kind(),
            Error::GeneratorFailure(_) => "generator_failure",
            Error::DegenerateEmbedding => "degenerate_embedding",
            Error::Format(_) => "format",
            Error::Encoding { .. } => "encoding",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
