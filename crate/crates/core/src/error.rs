use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {layer}: {message}")]
    Shape { layer: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Re-labels a shape error with the name of the layer that raised it.
    pub fn in_layer(self, name: &str) -> Self {
        match self {
            Error::Shape { layer, message } => Error::Shape {
                layer: format!("{name} ({layer})"),
                message,
            },
            other => other,
        }
    }

    /// Process exit code for this error category: config=2, data=3, numeric=4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 2,
            Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}
