use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] motionseg::Error),

    #[error(transparent)]
    Service(#[from] motionseg_service::ServiceError),

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("server: {0}")]
    Server(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}
