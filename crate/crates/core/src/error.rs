use thiserror::Error;

use crate::constraints::Token;

#[derive(Debug, Error)]
pub enum HirError {
    #[error("no judge registered for soft constraint key `{0}`")]
    UnknownJudgeKey(String),

    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),

    #[error("judge reply is not a YES/NO verdict: {0:?}")]
    JudgeParseError(String),

    #[error("constraint-level accuracy is undefined on an empty constraint set")]
    EmptyConstraintSet,

    #[error("token {token} is outside the vocabulary of size {vocab}")]
    VocabularyOverflow { token: Token, vocab: usize },

    #[error("mask has {got} entries but the constraint set has {expected}")]
    MaskLengthMismatch { expected: usize, got: usize },

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("duplicate constraint id `{0}` in one constraint set")]
    DuplicateConstraint(String),

    #[error("unsatisfiable task spec: {0}")]
    UnsatisfiableSpec(String),

    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("rewards have zero variance; no advantage signal")]
    DegenerateBatch,

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("decomposition identity violated (|lhs - rhs| = {difference:e}); fixture: {fixture}")]
    EquivalenceViolation { difference: f64, fixture: String },

    #[error("pass@k needs 1 <= k <= n (got n = {n}, k = {k})")]
    InvalidK { n: usize, k: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter file: {0}")]
    ParamFormat(String),

    #[error("record format: {0}")]
    Record(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HirError> = std::result::Result<T, E>;
