//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, NetDpError>;

#[derive(Debug, Error)]
pub enum NetDpError {
    /// A caller-supplied parameter violates a precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Threat-model invariant violated (observer equals target, target in
    /// colluding set, empty colluding set, ...).
    #[error("invalid threat model: {0}")]
    Model(String),

    /// Matrix/vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The sensitivity direction is not in the range of the observation
    /// operator, so the projected-Gaussian reduction does not apply.
    #[error("direction not in operator range (relative residual {residual:.3e} > tolerance {tolerance:.3e})")]
    Range { residual: f64, tolerance: f64 },

    /// A size limit was exceeded (dense route, brute-force enumeration).
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Line-oriented text input could not be parsed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Binary dataset input (IDX) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// An error bound to a specific (observer, target) pair of a sweep.
    #[error("pair (i={observer}, j={target}): {source}")]
    Pair {
        observer: usize,
        target: usize,
        #[source]
        source: Box<NetDpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NetDpError {
    /// Attach pair identity to an error propagating out of a pairwise sweep.
    pub fn for_pair(self, observer: usize, target: usize) -> Self {
        NetDpError::Pair {
            observer,
            target,
            source: Box::new(self),
        }
    }
}
