//! Exit codes, following sysexits where one fits.

use pmdice::Error;

pub const FAILURE: u8 = 1;
pub const SHAPE: u8 = 2;
pub const USAGE: u8 = 64;
pub const DATA: u8 = 65;
pub const NO_INPUT: u8 = 66;
pub const CANT_CREATE: u8 = 73;
pub const CONFIG: u8 = 78;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    /// Failure while reading `what`.
    pub fn reading(what: &std::path::Path, e: Error) -> Self {
        let code = match e {
            Error::Io(_) => NO_INPUT,
            Error::Format { .. } | Error::Unsupported(_) | Error::Domain(_) => DATA,
            _ => FAILURE,
        };
        Failure::new(code, format!("{}: {e}", what.display()))
    }

    pub fn creating(what: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Failure::new(CANT_CREATE, format!("cannot write {}: {e}", what.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) => SHAPE,
            Error::Config { .. } => CONFIG,
            Error::Format { .. } | Error::Unsupported(_) => DATA,
            Error::Io(_) => CANT_CREATE,
            Error::Generation(_) | Error::NonFinite { .. } => FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}
