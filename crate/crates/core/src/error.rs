use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed NDJSON at line {line_no}: {message}")]
    MalformedLine { line_no: usize, message: String },
    #[error("schema violation in sample `{sample_id}`: field `{field}`")]
    SchemaViolation { sample_id: String, field: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("ids present in both suspect and reference sets: {0:?}")]
    Overlap(Vec<String>),
    #[error("candidate set is empty")]
    EmptySet,
    #[error("input is empty")]
    EmptyInput,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("suspect and reference sets differ in size ({suspects} vs {references})")]
    UnequalSets { suspects: usize, references: usize },
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("trace `{0}` has no repeated-pass losses")]
    MissingRepeatedPass(String),
    #[error("trace `{0}` has no unconditional log-probabilities")]
    MissingUnconditional(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model does not expose input gradients")]
    GradientUnavailable,
    #[error("all feature columns have zero variance")]
    SingularFeatures,
    #[error("non-finite value in feature `{feature}` for sample `{sample_id}`")]
    NonFinite { sample_id: String, feature: String },
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
