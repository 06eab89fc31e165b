use std::fmt;

use sftpick_core::Error;

/// A command failure, classified by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Io(String),
    Remote(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
            Failure::Remote(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Remote(m) => write!(f, "remote error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. } => Failure::Io(msg),
            Error::Parse { .. } | Error::Validation(_) | Error::InvalidArgument(_) => {
                Failure::Validation(msg)
            }
            Error::Remote(_) => Failure::Remote(msg),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
