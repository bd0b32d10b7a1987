//! Federated learning simulation over incomplete multimodal time-series
//! clients: early-fusion training with modality-invariant contrastive
//! learning, entropy-weighted aggregation and global-aligned distillation,
//! the FedAvg/FedProx/MOON baselines, analytic cost models, and diagnostics.

pub mod cost;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fl;
pub mod nn;
pub mod rng;

pub use error::{Result, SimError};
