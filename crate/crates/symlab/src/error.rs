//! Error type shared by all modules.

/// Errors reported by grid construction, operator assembly and estimators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Grid parameters violate the spectral-grid preconditions.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Data supported outside the region a contract requires.
    #[error("domain violation: {0}")]
    Domain(String),

    /// Two objects live on incompatible grids or have mismatched lengths.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A dense materialisation was requested above the dense cap.
    #[error("dense materialisation of a {total}x{total} operator exceeds the cap of {cap}")]
    DenseCap { total: usize, cap: usize },

    /// Input that must be sorted (e.g. a singular-value sequence) is not.
    #[error("unsorted input: {0}")]
    Unsorted(String),

    /// An iterative or library numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
