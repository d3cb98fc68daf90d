use thiserror::Error;

/// Errors raised anywhere in the quantizer.
#[derive(Debug, Error)]
pub enum HbllmError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("numeric failure at pivot {pivot}: {message}")]
    Numeric { pivot: usize, message: String },

    #[error("corrupt quantized layer: {0}")]
    Corrupt(String),

    #[error("CRC mismatch at byte {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { offset: usize, stored: u32, computed: u32 },

    #[error("integrity error at byte {offset}: {message}")]
    Integrity { offset: usize, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl HbllmError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        HbllmError::Shape(msg.into())
    }

    pub(crate) fn length(msg: impl Into<String>) -> Self {
        HbllmError::Length(msg.into())
    }

    pub(crate) fn config(field: &'static str, msg: impl Into<String>) -> Self {
        HbllmError::Config {
            field,
            message: msg.into(),
        }
    }

    pub(crate) fn numeric(pivot: usize, msg: impl Into<String>) -> Self {
        HbllmError::Numeric {
            pivot,
            message: msg.into(),
        }
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        HbllmError::Corrupt(msg.into())
    }

    pub fn is_integrity(&self) -> bool {
        self.exit_code() == 3
    }

    pub(crate) fn integrity(offset: usize, msg: impl Into<String>) -> Self {
        HbllmError::Integrity {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code for this error class: 2 validation, 3 integrity, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HbllmError::Shape(_)
            | HbllmError::Length(_)
            | HbllmError::Config { .. }
            | HbllmError::Io { .. } => 2,
            HbllmError::Integrity { .. } | HbllmError::Checksum { .. } | HbllmError::Corrupt(_) => 3,
            HbllmError::Numeric { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, HbllmError>;
