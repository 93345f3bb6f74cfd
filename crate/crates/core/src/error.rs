use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// Input outside the domain of an operation (empty sequence, all-masked softmax, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A record or structure violates a declared invariant.
    #[error("validation error{}: {field}: {message}", record.map(|r| alloc::format!(" in record {r}")).unwrap_or_default())]
    Validation {
        record: Option<usize>,
        field: String,
        message: String,
    },
    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            record: None,
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a record index to a validation error; other variants pass through.
    pub fn at_record(self, index: usize) -> Self {
        match self {
            Error::Validation { field, message, .. } => Error::Validation {
                record: Some(index),
                field,
                message,
            },
            other => other,
        }
    }
}
