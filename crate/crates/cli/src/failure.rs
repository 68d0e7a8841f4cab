use std::fmt;

use sumlens_core::Error;

/// Command failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Backend(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Data(_) => 4,
        }
    }

    /// Any core error, forced into the data class.
    pub fn data(e: Error) -> Self {
        match Failure::from(e) {
            Failure::Data(m) | Failure::Config(m) | Failure::Backend(m) => Failure::Data(m),
        }
    }

    /// Any core error, forced into the backend class.
    pub fn backend(e: Error) -> Self {
        match Failure::from(e) {
            Failure::Data(m) | Failure::Config(m) | Failure::Backend(m) => Failure::Backend(m),
        }
    }

    pub fn io(what: &str, e: std::io::Error) -> Self {
        Failure::Data(format!("{what}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, m) = match self {
            Failure::Config(m) => ("configuration", m),
            Failure::Backend(m) => ("backend", m),
            Failure::Data(m) => ("data", m),
        };
        write!(f, "{kind} error: {m}")
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) | Error::Range { .. } | Error::Vocab(_) => Failure::Config(m),
            Error::UnsupportedCapability(_) | Error::BackendUnavailable(_) | Error::Protocol(_) | Error::Checkpoint(_) => {
                Failure::Backend(m)
            }
            Error::EmptyDocument
            | Error::Index { .. }
            | Error::Shape { .. }
            | Error::EmptySource
            | Error::NotApplicable(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => Failure::Data(m),
        }
    }
}
