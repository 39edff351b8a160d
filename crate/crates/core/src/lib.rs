//! Federated LoRA fine-tuning lab with robust-PCA aggregation.
//!
//! Clients fine-tune low-rank adapters on a frozen base model; the server
//! merges their deltas with FedAvg, scaled averaging, TIES merging or
//! FedRPCA (robust-PCA split into a common low-rank part and client-specific
//! sparse parts, with the sparse part amplified).

pub mod aggregation;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod rpca;

pub use error::{Error, Result};
pub use linalg::Matrix;
