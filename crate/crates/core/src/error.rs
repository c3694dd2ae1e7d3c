use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("encoding error: feature `{feature}` has out-of-vocabulary value `{value}`")]
    Encoding { feature: String, value: String },

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("schema conflict on feature `{feature}`: {detail}")]
    SchemaConflict { feature: String, detail: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Protocol,
    Data,
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorClass::Config,
            Error::Protocol(_) | Error::Codec(_) => ErrorClass::Protocol,
            Error::Context { source, .. } => source.class(),
            Error::Io(e) if is_network(e) => ErrorClass::Protocol,
            _ => ErrorClass::Data,
        }
    }

    /// Exit codes: 2 config, 3 protocol, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Protocol => 3,
            ErrorClass::Data => 4,
        }
    }
}

fn is_network(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(
        e.kind(),
        ConnectionRefused
            | ConnectionReset
            | ConnectionAborted
            | NotConnected
            | AddrInUse
            | AddrNotAvailable
            | BrokenPipe
            | UnexpectedEof
            | TimedOut
    )
}

pub trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(context()))
    }
}
