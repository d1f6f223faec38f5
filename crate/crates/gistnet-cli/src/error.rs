use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command-level errors, mapped onto process exit codes:
/// 1 validation/config, 2 I/O or format, 3 numeric failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] gistnet_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        use gistnet_core::Error as Core;
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Format(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Core(core) => match core {
                Core::Shape(_)
                | Core::Bounds(_)
                | Core::Argument(_)
                | Core::Config(_)
                | Core::Validation(_) => 1,
                Core::Parse(_) | Core::Io { .. } => 2,
                Core::Numeric(_) => 3,
            },
        }
    }
}
