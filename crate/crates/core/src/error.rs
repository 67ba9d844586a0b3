use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at step {step}: {what}")]
    Numerical { step: usize, what: String },

    #[error("singular covariance in component {component}: {what}")]
    SingularCovariance { component: String, what: String },

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("unsupported format version {found} (expected {expected}) in {what}")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error{}: {source}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Io {
        context: Option<String>,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "argument",
            Error::Numerical { .. } | Error::SingularCovariance { .. } => "numerical",
            Error::Diverged { .. } => "diverged",
            Error::Version { .. } => "version",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Context { source, .. } => source.category(),
        }
    }

    pub fn context(self, ctx: impl Into<String>) -> Error {
        Error::Context {
            context: ctx.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn numerical(step: usize, what: impl Into<String>) -> Error {
        Error::Numerical {
            step,
            what: what.into(),
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io { context: None, source }
    }
}

pub(crate) trait IoContext<T> {
    fn io_context(self, ctx: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, io::Error> {
    fn io_context(self, ctx: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: Some(ctx()),
            source,
        })
    }
}
