use std::path::PathBuf;

use snr_enhance::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}line {line}: {message}")]
    Config {
        context: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Format { .. } | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) => 1,
                CoreError::Io { .. }
                | CoreError::CorruptModel(_)
                | CoreError::CorruptFeatures(_)
                | CoreError::Corpus(_)
                | CoreError::Manifest { .. } => 2,
                _ => 3,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
