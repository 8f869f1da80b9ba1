use thiserror::Error;

/// Everything that can go wrong while building, evaluating or checking networks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("projection search exhausted after {retries} retries (best ratio {best_ratio:.6}, needed {target:.6})")]
    JlExhausted {
        retries: usize,
        best_ratio: f64,
        target: f64,
    },

    #[error("fixed-point overflow in layer {layer}: |{value}| does not fit {int_bits} integer bits")]
    FixedPointOverflow {
        layer: usize,
        value: f64,
        int_bits: u32,
    },

    #[error("quantization: {0}")]
    Quantization(String),

    #[error("construction invariant violated: {0}")]
    Construction(String),

    #[error("csv row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
