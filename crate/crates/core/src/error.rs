//! Crate-wide error type.

use std::fmt;

/// Result alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, bound propagation, and the
/// scenario runtime.
#[derive(Debug, Clone)]
pub enum Error {
    /// Malformed configuration or inconsistent dimensions.
    Config(String),
    /// A dimension check failed while wiring matrices together.
    DimensionMismatch {
        context: &'static str,
        detail: String,
    },
    /// The requested system id is not in the catalog.
    UnsupportedSystem(String),
    /// An exactness check on a decomposition failed.
    DecompositionInvalid {
        max_residual: f64,
        tolerance: f64,
        worst_sample: Vec<f64>,
    },
    /// A parameter is outside its admissible range (e.g. gamma <= 0).
    InvalidParameter(String),
    /// The operation needs a bounded validity set but got an unbounded one.
    RequiresBoundedSet(String),
    /// A covariance interval violates its invariants (L <= U, symmetry, ...).
    InvalidInterval(String),
    /// The per-entry SDP could not certify a bound (infeasible or solver
    /// failure); carries the entry coordinates and solver status.
    BoundUnavailable {
        step: Option<usize>,
        phase: Option<&'static str>,
        i: usize,
        j: usize,
        status: &'static str,
    },
    /// A numerical operation failed (singular matrix, non-finite value).
    Numerical(String),
    /// Not enough samples for a statistical estimate.
    InsufficientSamples { needed: usize, got: usize },
    /// Horizon mismatch between intervals and an ensemble.
    HorizonMismatch { intervals: usize, ensemble: usize },
    /// File or serialization failure surfaced from the CLI layer.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::DimensionMismatch { context, detail } => {
                write!(f, "dimension mismatch in {context}: {detail}")
            }
            Error::UnsupportedSystem(id) => {
                write!(f, "unsupported system: no catalog entry for '{id}'")
            }
            Error::DecompositionInvalid {
                max_residual,
                tolerance,
                worst_sample,
            } => write!(
                f,
                "decomposition invalid: max residual {max_residual:.3e} exceeds \
                 tolerance {tolerance:.3e} at sample {worst_sample:?}"
            ),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::RequiresBoundedSet(msg) => {
                write!(f, "operation requires a bounded validity set: {msg}")
            }
            Error::InvalidInterval(msg) => write!(f, "invalid covariance interval: {msg}"),
            Error::BoundUnavailable {
                step,
                phase,
                i,
                j,
                status,
            } => {
                write!(f, "bound unavailable for entry ({i},{j})")?;
                if let Some(p) = phase {
                    write!(f, " [{p}]")?;
                }
                if let Some(k) = step {
                    write!(f, " at step {k}")?;
                }
                write!(f, ": solver status {status}")
            }
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::InsufficientSamples { needed, got } => {
                write!(f, "insufficient samples: need at least {needed}, got {got}")
            }
            Error::HorizonMismatch { intervals, ensemble } => write!(
                f,
                "horizon mismatch: {intervals} interval steps vs {ensemble} ensemble steps"
            ),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
