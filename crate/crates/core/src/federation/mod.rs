//! Federated orchestration: partitioning, client-side training and the
//! broadcast / train / aggregate round loop.

mod client;
mod engine;
mod partition;

pub use client::{fedprox_loss_and_grad, local_train, ClientMethod, ClientUpdate, LocalResult};
pub use engine::{initial_metrics, run, run_round, FederatedSetup, RoundOutcome, RunOutput, ScaffoldState, ServerState};
pub use partition::{
    dirichlet_partition, dirichlet_partition_indices, histogram_entropy, Partition,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_method: ClientMethod,
    pub optimizer: OptimizerConfig,
    /// Seeds the client shuffles. Run configs set it from their top-level
    /// `seed`, so it is not read from the `[federation]` table.
    #[serde(skip)]
    pub seed: u64,
    /// Store measured per-round wall time in the metrics. Off by default so
    /// that metrics files are reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 50,
            dirichlet_alpha: 0.3,
            rounds: 100,
            local_epochs: 1,
            batch_size: 32,
            client_method: ClientMethod::Plain {},
            optimizer: OptimizerConfig::default(),
            seed: 0,
            record_wall_clock: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("federation.num_clients must be at least 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0) || !self.dirichlet_alpha.is_finite() {
            return Err(Error::Config(format!(
                "federation.dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "federation.local_epochs and federation.batch_size must be positive".into(),
            ));
        }
        if let ClientMethod::Fedprox { mu } = self.client_method {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(Error::Config(format!("fedprox mu must be nonnegative, got {mu}")));
            }
        }
        self.optimizer.validate()
    }
}
