//! Federated orchestration: client selection, local updates, aggregation.

pub mod aggregate;
pub mod client;
pub mod config;
pub mod server;

pub use aggregate::{aggregate_fedavg, aggregate_quality_weighted, weighted_average};
pub use client::{client_update, dataset_mean_entropy, entropy_quality_weight, predict_logits, quality_from_entropy, ClientUpdateResult, RoundContext};
pub use config::{AugmentConfig, FlConfig, RetainPolicy, Strategy, Weighting};
pub use server::{evaluate, run_federation, run_federation_from, select_clients, RoundReport};
