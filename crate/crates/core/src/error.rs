use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("internal model is unstable: root modulus {modulus} exceeds 1")]
    UnstableModel { modulus: f64 },

    #[error("cannot derive an internal model automatically for {0}; supply one explicitly")]
    UnsupportedDerivation(String),

    #[error("harmonic {harmonic} aliases: angle {angle} rad is not below pi")]
    Aliasing { harmonic: usize, angle: f64 },

    #[error("LMI system is infeasible (best margin {margin:e})")]
    Infeasible { margin: f64 },

    #[error("LMI solver did not converge within {iterations} Newton steps (margin {margin:e}, gap {gap:e})")]
    NoConvergence { iterations: usize, margin: f64, gap: f64 },

    #[error("controller synthesis failed: {0}")]
    Synthesis(String),

    #[error("closed loop is unstable at lambda = {lambda} (pole modulus {modulus})")]
    UnstableLoop { lambda: f64, modulus: f64 },

    #[error("small gain condition violated: gamma * N2 = {product} >= 1")]
    SmallGainViolated { product: f64 },

    #[error("solution oracle failed at step {step}: {reason}")]
    Oracle { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
