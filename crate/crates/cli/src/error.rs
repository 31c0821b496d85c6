use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// One entry per violated field.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("run aborted: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<p2s_core::P2sError> for CliError {
    fn from(e: p2s_core::P2sError) -> Self {
        match e {
            p2s_core::P2sError::Config(m) => CliError::Config(vec![m]),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("I/O error: {e}"))
    }
}
