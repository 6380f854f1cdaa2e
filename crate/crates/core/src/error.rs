//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("conflicting parcel location for {parcel_id}: ({a_lat}, {a_lon}) vs ({b_lat}, {b_lon})")]
    ConflictingLocation {
        parcel_id: String,
        a_lat: f64,
        a_lon: f64,
        b_lat: f64,
        b_lon: f64,
    },

    #[error("point ({lat}, {lon}) lies outside the grid extent")]
    OutsideGrid { lat: f64, lon: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("feature schema mismatch: {0}")]
    FeatureSchemaMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown feature: {0}")]
    UnknownFeature(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
