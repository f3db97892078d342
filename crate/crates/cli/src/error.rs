use std::path::{Path, PathBuf};

use fire_lp::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{source}")]
    Core {
        path: Option<PathBuf>,
        #[source]
        source: fire_lp::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn missing_section(name: &str) -> Self {
        CliError::Usage(format!("config has no [{name}] section"))
    }

    /// Wrap a library error raised while processing `path`.
    pub fn at(path: &Path) -> impl FnOnce(fire_lp::Error) -> CliError + '_ {
        move |source| CliError::Core {
            path: Some(path.to_path_buf()),
            source,
        }
    }

    /// 1 for estimation failures, 2 for input, i/o and configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.kind() == ErrorKind::Estimation => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config { .. } | CliError::Usage(_) => "config",
            CliError::Core { source, .. } => match source.kind() {
                ErrorKind::Estimation => "estimation",
                ErrorKind::Input => "input",
            },
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            CliError::Io { path, .. } | CliError::Config { path, .. } => Some(path),
            CliError::Core { path, .. } => path.as_deref(),
            CliError::Usage(_) => None,
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("status".into(), "error".into());
        obj.insert("kind".into(), self.kind().into());
        obj.insert("exit_code".into(), self.exit_code().into());
        if let Some(p) = self.path() {
            obj.insert("path".into(), p.display().to_string().into());
        }
        obj.insert("message".into(), self.to_string().into());
        serde_json::Value::Object(obj).to_string()
    }
}

impl From<fire_lp::Error> for CliError {
    fn from(source: fire_lp::Error) -> Self {
        CliError::Core { path: None, source }
    }
}
