use std::fmt;

use genad_core::Error;

/// A failed command and its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Numeric or verification failure (exit 1).
    Numeric(String),
    /// Bad arguments or spec (exit 2).
    Usage(String),
    /// Unreadable or inconsistent data (exit 3).
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Numeric(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Numeric(m) | Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Numeric(_) => Failure::Numeric(msg),
            Error::Spec(_) | Error::Plan(_) | Error::Contract(_) => Failure::Usage(msg),
            _ => Failure::Data(msg),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;
