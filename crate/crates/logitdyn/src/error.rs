//! Error type shared across the crate.

/// Errors produced by construction, numerics, and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input failed a validity check (non-finite entries, out-of-range
    /// values, malformed probability vectors, and similar).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two arguments disagree on a dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A feature vector with zero squared norm was passed where a projection
    /// onto the feature direction is required.
    #[error("degenerate feature: ||phi||^2 = 0")]
    DegenerateFeature,

    /// The Jacobi eigensolver did not reach its off-diagonal threshold.
    #[error(
        "eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})"
    )]
    EigenNonConvergence { sweeps: usize, off_norm: f64 },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An oracle invalidated itself (for example, two finite-difference step
    /// sizes disagree), so the comparison says nothing about the main path.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// A brute-force oracle was asked for a problem above its size cap.
    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    /// A scenario or sweep configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A plot or export was requested over an empty selection.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
