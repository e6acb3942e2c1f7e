use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A configuration is inconsistent (scenario vs data, batch too small, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Two records share an identifier that must be unique.
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    /// The training loss stopped being finite.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    /// Binary payload could not be decoded.
    #[error("corrupt data: {0}")]
    Corrupt(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
