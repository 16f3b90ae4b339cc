use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point (q={q}, p={p}) lies outside the domain of `{observable}`")]
    Domain { observable: String, q: f64, p: f64 },

    #[error("time {t} outside the interval [{start}, {end}]")]
    Interval { t: f64, start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("structure constants are not antisymmetric at (i={i}, j={j}, k={k})")]
    NotAntisymmetric { i: usize, j: usize, k: usize },

    #[error("Jacobi identity violated by {residual:e} at (i={i}, j={j}, k={k}, l={l})")]
    Jacobi {
        i: usize,
        j: usize,
        k: usize,
        l: usize,
        residual: f64,
    },

    #[error("integration failed at t={t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("step {step} too large: step*|H|/hbar = {ratio:.3} exceeds 0.1, use step <= {hint:e}")]
    StepTooLarge { step: f64, ratio: f64, hint: f64 },

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("unknown preset `{name}` (valid: {valid})")]
    UnknownPreset { name: String, valid: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
