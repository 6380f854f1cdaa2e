//! Forecasting pipeline for grid-level home-transaction turnover.
//!
//! The crate turns parcel-level deed records into an analysis panel over an
//! N×M grid, builds spatially lagged features (neighbor-ring averages, local
//! Moran's I, distance features, temporal lags), trains a random-forest
//! regressor against three naive baselines under temporal cross-validation,
//! explains predictions with exact tree Shapley values, and audits prediction
//! error against interpolated census covariates.
//!
//! Numeric kernels are generic over [`scalar::Scalar`] (any `num-traits`
//! float); the pipeline types use the crate-level [`Real`] alias.

pub mod audit;
pub mod error;
pub mod eval;
pub mod explain;
pub mod export;
pub mod features;
pub mod forest;
pub mod grid;
pub mod ingest;
pub mod panel;
pub mod scalar;
pub mod synth;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Scalar type used by the concrete pipeline.
pub type Real = f64;

/// Cells with fewer ever-transacted homes than this are dropped everywhere.
pub const MIN_HOMES_PER_CELL: u32 = 10;
