use thiserror::Error;

use crate::ithax::BandMapping;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("undefined stock depth: assignment covers no stock value")]
    UndefinedStockDepth,

    #[error("undefined WAPE: actuals sum to zero")]
    UndefinedWape,

    #[error("unknown product id `{0}`")]
    UnknownProduct(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("insufficient history: need {required} weeks, have {available}")]
    InsufficientHistory { required: u32, available: u32 },

    /// No adjustable band is left. The mapping is carried so B0 can be diagnosed.
    #[error("bottomed out: no adjustable cover band remains (widen the initial band mapping)")]
    BottomedOut { mapping: BandMapping },

    #[error("missing prediction for product `{product}` at depth {depth}")]
    MissingPrediction { product: String, depth: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
