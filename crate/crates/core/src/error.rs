use thiserror::Error;

use crate::caption::CaptionParseError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` is a root and has no parent")]
    RootLabel(String),
    #[error("hierarchy line {line}: {reason}")]
    HierarchyFormat { line: usize, reason: String },
    #[error("hierarchy contains a cycle through `{0}`")]
    HierarchyCycle(String),
    #[error("duplicate label name `{0}` (names are compared lowercased and trimmed)")]
    DuplicateName(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    #[error("prediction has {got} entries but the policy needs {need}")]
    PredictionTooShort { got: usize, need: usize },
    #[error("invalid failure policy `{0}`")]
    InvalidPolicy(String),
    #[error(transparent)]
    Caption(#[from] CaptionParseError),
    #[error("caption base `{found}` does not match the label's base prompt `{expected}`")]
    BasePromptMismatch { expected: String, found: String },
}
