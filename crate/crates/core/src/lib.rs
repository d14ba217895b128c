//! Correction of numerical-model sea surface temperature fields with a
//! generative prior learned from observations, followed by ConvLSTM
//! forecasting of the corrected fields.

pub mod ablation;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gan;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod predictor;
pub mod prior;
pub mod sstb;
pub mod synthetic;

pub use error::{Result, SstError};
