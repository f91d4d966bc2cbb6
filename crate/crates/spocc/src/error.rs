use std::path::PathBuf;

use thiserror::Error;

/// Exit status for input that fails validation.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status when `--strict` finds an unconverged parameter.
pub const EXIT_UNCONVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] spocc_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{path}:{line}: duplicate record for site {site}, t {time}, replicate {replicate}")]
    DuplicateRecord { path: PathBuf, line: u64, site: String, time: usize, replicate: usize },

    #[error("{path}:{line}: site {site} is not in the declared site table")]
    UnknownSite { path: PathBuf, line: u64, site: String },

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("R-hat above threshold for {}", .0.join(", "))]
    Unconverged(Vec<String>),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<CliError> },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Self::Context { context: context.into(), source: Box::new(self) }
    }

    /// Process exit status: 2 for bad input, 3 for a strict convergence
    /// failure, 1 for anything that went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        use spocc_core::Error as E;
        match self {
            Self::Context { source, .. } => source.exit_code(),
            Self::Unconverged(_) => EXIT_UNCONVERGED,
            Self::Io { .. } => 1,
            Self::Model(E::Chain { .. } | E::NonConvergent) => 1,
            _ => EXIT_VALIDATION,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<CliError>> ResultExt<T> for std::result::Result<T, E> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.into().context(context()))
    }
}
