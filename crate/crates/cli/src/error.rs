use ionfocus::analysis::AnalysisError;
use ionfocus::config::ConfigError;
use ionfocus::io::IoError;
use ionfocus::protocols::ProtocolError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Output(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { .. } => CliError::Output(e.to_string()),
            IoError::Csv { .. } | IoError::Table { .. } => CliError::Input(e.to_string()),
        }
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Protocol(_) => "physics",
            CliError::Analysis(_) => "analysis",
            CliError::Output(_) => "output",
        }
    }

    /// 2 for bad configuration or input data, 3 for failures inside the
    /// simulation or the fit, 1 for output problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Protocol(_) | CliError::Analysis(_) => 3,
            CliError::Output(_) => 1,
        }
    }

    pub fn record(&self, command: &str) -> serde_json::Value {
        let detail = match self {
            CliError::Protocol(e) => format!("{e:?}"),
            CliError::Analysis(e) => format!("{e:?}"),
            CliError::Config(e) => format!("{e:?}"),
            _ => self.to_string(),
        };
        json!({
            "status": "error",
            "command": command,
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
            "detail": detail,
        })
    }
}
