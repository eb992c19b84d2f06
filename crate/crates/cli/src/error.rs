use std::path::PathBuf;

use panelguard::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] panelguard::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } | CliError::Serve(_) => ErrorKind::Data,
        }
    }

    /// 1 usage, 2 data, 3 fit.
    pub fn exit_code(&self) -> u8 {
        exit_code(self.kind())
    }
}

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Fit => 3,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
