use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("world config: {0}")]
    Config(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown attribute phrase `{0}`")]
    UnknownPhrase(String),
    #[error("prompt does not parse: {0}")]
    Prompt(String),
    #[error("image does not decode: {0}")]
    Undecodable(String),
    #[error("k={k} exceeds the {classes} classes")]
    TooManyLabels { k: usize, classes: usize },
    #[error("unknown embedding space `{0}`")]
    UnknownSpace(String),
}
