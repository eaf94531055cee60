use thiserror::Error;

/// Errors raised by the renderer, its backward passes, and the oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("gaussian anchor {anchor} out of range for a mesh with {vertex_count} vertices")]
    InvalidAnchor { anchor: u32, vertex_count: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("missing forward state: {0}")]
    MissingState(&'static str),
    #[error("fragment stream is not depth sorted at index {0}")]
    Unsorted(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("input exceeds desk-scale limits: {0}")]
    OverLimit(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, found })
    }
}
