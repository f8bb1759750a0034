//! ℓ2-box ADMM detection for 4^Q-QAM massive MIMO.
//!
//! The library is organized around the real-valued re-parameterization of the
//! complex MIMO link r = Hx + n, where each QAM symbol vector is decomposed
//! into Q binary layers x = Σ_q 2^{q-1} x_q with x_q ∈ {−1,+1}^{2U}.
//!
//! - [`model`]: channel generation, bit/layer/symbol maps, noisy transmission
//! - [`detector`]: the ℓ2-box ADMM iteration with closed-form updates
//! - [`baselines`]: MMSE, zero-forcing, and exhaustive ML reference detectors
//! - [`analysis`]: penalty thresholds, augmented Lagrangian, convergence checks
//! - [`sim`]: seeded Monte-Carlo BER sweeps and timing benches

pub mod analysis;
pub mod baselines;
pub mod detector;
pub mod model;
pub mod sim;

/// Errors surfaced by library operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("enumeration budget exceeded: {0} candidates > cap {1}")]
    BudgetExceeded(u128, u64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
