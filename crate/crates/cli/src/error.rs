use std::path::PathBuf;

use serde::Serialize;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs {} (run the earlier stage first)", missing.display())]
    StageDependency { stage: &'static str, missing: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] densitron_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::StageDependency { .. } => "stage_dependency",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "computation",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::StageDependency { .. } => 3,
            CliError::Io { .. } => 4,
            CliError::Core(_) => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            missing: Option<String>,
        }
        let missing = match self {
            CliError::StageDependency { missing, .. } => Some(missing.display().to_string()),
            _ => None,
        };
        serde_json::to_string(&Out { error: self.kind(), message: self.to_string(), missing })
            .expect("plain struct serializes")
    }
}
