use std::fmt;
use std::path::Path;

use serde_json::json;

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Io,
    Numeric,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Numeric => 4,
            Kind::Internal => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Numeric => "numeric",
            Kind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            kind: Kind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        json!({
            "error": self.kind.name(),
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.message)
    }
}

impl From<fluorosynth::Error> for CliError {
    fn from(e: fluorosynth::Error) -> Self {
        use fluorosynth::Error as E;
        let kind = match &e {
            E::InvalidArgument(_) => Kind::Config,
            E::NonFinite(_) => Kind::Numeric,
            E::Io { .. }
            | E::Json { .. }
            | E::Format { .. }
            | E::MissingTensor(_)
            | E::DigestMismatch { .. } => Kind::Io,
            _ => Kind::Internal,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}
