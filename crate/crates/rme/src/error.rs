use thiserror::Error;

#[derive(Debug, Error)]
pub enum RmeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid index out of range: ({i}, {j}) for {n_rows}x{n_cols} grid")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("no measurements fell inside any sampled patch after {attempts} attempts")]
    EmptyPatch { attempts: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RmeError>;

impl RmeError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        RmeError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
