use num_complex::Complex64;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain file, line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no dimer cover: {0}")]
    NoCover(String),

    #[error("Kasteleyn face condition violated at {face}: alternating product {product}")]
    FaceCondition { face: String, product: Complex64 },

    #[error("numerically singular matrix (pivot {pivot:e} at step {step})")]
    Singular { step: usize, pivot: f64 },

    #[error("numerical degradation: {0}")]
    Numerical(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("refusing: {0}")]
    TooLarge(String),

    #[error("evaluation at or too close to a pole: {0}")]
    Pole(String),

    #[error("series did not reach target precision: {0}")]
    Precision(String),

    #[error("value out of attainable range: {0}")]
    Range(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
