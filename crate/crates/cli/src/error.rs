use std::fmt;

/// A failed command with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const USAGE: u8 = 1;
pub const INVALID: u8 = 2;
pub const BACKEND: u8 = 3;

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: INVALID,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError {
            code: BACKEND,
            message: message.into(),
        }
    }

    /// Input files that cannot be read are a validation problem, not a
    /// backend one.
    pub fn input(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::invalid(format!("{}: {e}", path.display()))
    }

    pub fn output(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::backend(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<avar_core::Error> for CliError {
    fn from(e: avar_core::Error) -> Self {
        match e {
            avar_core::Error::Io(_) => Self::backend(e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

impl From<avar_synth::Error> for CliError {
    fn from(e: avar_synth::Error) -> Self {
        match e {
            avar_synth::Error::Backend { .. } | avar_synth::Error::Io(_) => Self::backend(e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::invalid(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
