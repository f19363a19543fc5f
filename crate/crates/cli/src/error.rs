use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] nsynth::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 bad input, 3 solver or LP failure, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                nsynth::Error::Io(_) => 4,
                e if e.is_solver_failure() => 3,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            3 => "solver",
            4 => "io",
            _ => "validation",
        }
    }

    /// `{"error": kind, "code": n, "message": ...}` on one line.
    pub fn to_json_line(&self) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ");
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": message,
        })
        .to_string()
    }
}
