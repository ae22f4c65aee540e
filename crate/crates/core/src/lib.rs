//! Multi-interest self-supervised CTR prediction.
//!
//! A DIN-style click model is trained jointly with two contrastive
//! objectives over convolutional interest representations of the user's
//! behavior sequence. The crate covers the full pipeline: log ingestion and
//! synthetic corpora, sample construction, the model, Adam training with
//! early stopping, metrics and the sweep/robustness harnesses.

pub mod config;
pub mod data;
pub mod embedding;
pub mod harness;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod network;
pub mod optim;
pub mod params;
pub mod rng;
pub mod ssl;
pub mod train;

pub use config::{ExperimentConfig, ModelKind, Strategy};
pub use error::{MissError, Result};
pub use network::{ModelSpec, Network, Objective};
