//! Crate-wide error type.

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    /// A precondition on an argument failed (bad partition, rho out of
    /// range, non-positive tau, ...).
    InvalidArgument(String),
    /// Vector/matrix shapes do not agree.
    DimensionMismatch(String),
    /// An iterate left the finite range; indices locate the first offender.
    Divergence { s: usize, k: usize, p: usize },
    /// A fixed-point or iterative solve did not converge.
    NonConvergence(String),
    /// Instance container problems: bad magic, version, or layout.
    Container(String),
    /// Wire-frame decode failures, each distinctly reported.
    BadMagic([u8; 4]),
    UnsupportedVersion(u16),
    CrcMismatch { expected: u32, found: u32 },
    Truncated { needed: usize, got: usize },
    /// A worker or the fusion center failed mid-protocol.
    Transport { round: usize, detail: String },
    Config(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Divergence { s, k, p } => {
                write!(f, "divergence at outer {s}, inner {k}, processor {p}")
            }
            Error::NonConvergence(msg) => write!(f, "did not converge: {msg}"),
            Error::Container(msg) => write!(f, "instance container: {msg}"),
            Error::BadMagic(m) => write!(f, "bad frame magic {m:?}"),
            Error::UnsupportedVersion(v) => write!(f, "unsupported frame version {v}"),
            Error::CrcMismatch { expected, found } => {
                write!(f, "crc mismatch: expected {expected:#010x}, found {found:#010x}")
            }
            Error::Truncated { needed, got } => {
                write!(f, "truncated frame: needed {needed} bytes, got {got}")
            }
            Error::Transport { round, detail } => {
                write!(f, "transport failure in round {round}: {detail}")
            }
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
