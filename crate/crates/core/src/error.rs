use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vector or matrix dimensions do not line up.
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// A cache was produced by a different network shape or call.
    StaleCache(&'static str),
    /// Two parameter sets are not shape-congruent.
    ShapeMismatch(String),
    InvalidConfig(String),
    InvalidAction(String),
    /// Structural problem in a discussion tree.
    InvalidTree { id: i64, reason: String },
    /// Knowledge store ordering violation.
    OutOfOrder { ts: i64, tail: i64 },
    EmptyInput(&'static str),
    /// Exhaustive search refused because the problem is too large.
    TooLarge { what: &'static str, size: usize, limit: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                actual,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {actual}"),
            Error::StaleCache(what) => write!(f, "cache does not match {what}"),
            Error::ShapeMismatch(msg) => write!(f, "parameter shape mismatch: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidAction(msg) => write!(f, "invalid action: {msg}"),
            Error::InvalidTree { id, reason } => write!(f, "invalid tree at comment {id}: {reason}"),
            Error::OutOfOrder { ts, tail } => {
                write!(f, "document timestamp {ts} precedes store tail {tail}")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::TooLarge { what, size, limit } => {
                write!(f, "{what} too large for exhaustive search: {size} > {limit}")
            }
        }
    }
}

impl core::error::Error for Error {}
