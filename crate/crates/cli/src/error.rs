use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hybridchoice::Error),
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("estimation did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    /// 3 for non-convergence, 2 for everything the user has to fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NotConverged(_) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
