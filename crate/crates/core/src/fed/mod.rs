//! Horizontal federated learning over the common feature group.
//!
//! A [`FedServer`] and a set of [`FedClient`]s run synchronous FedAvg rounds:
//! broadcast, `local_epochs` of local training, upload, sample-weighted
//! aggregation. The same state machines drive both the in-process transport
//! and the TCP transport, which is why the two produce identical models.

mod aggregate;
mod client;
pub mod codec;
mod server;
mod transport;
pub mod wire;

pub use aggregate::{aggregation_coefficients, fedavg_aggregate};
pub use client::{ClientData, FedClient};
pub use codec::{decode_params, encode_params};
pub use server::FedServer;
pub use transport::{join, run_federated, serve, ServeOptions, Transport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_params, Activation, ModelParams, TrainConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub rounds: u32,
    pub local_epochs: usize,
    pub train: TrainConfig,
    pub expected_clients: usize,
    /// Hidden widths of the global model; the head is one sigmoid unit.
    pub hidden: Vec<usize>,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local_epochs: 2,
            train: TrainConfig::default(),
            expected_clients: 2,
            hidden: vec![64, 32],
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("fed: rounds must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("fed: local_epochs must be at least 1".into()));
        }
        if self.expected_clients == 0 {
            return Err(Error::Config(
                "fed: expected_clients must be at least 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("fed: zero-width hidden layer".into()));
        }
        self.train.validate()
    }

    /// Initial global model for `input_dim` encoded columns.
    pub fn init_global(&self, input_dim: usize) -> Result<ModelParams> {
        let (dims, acts) = classifier_shape(input_dim, &self.hidden);
        init_params(
            &dims,
            &acts,
            derive_seed(self.train.rng_seed, "global-init"),
        )
    }

    /// Training config for one client; its shuffle stream is keyed by id.
    pub fn client_train(&self, client_id: &str) -> TrainConfig {
        self.train.with_seed(derive_seed(
            self.train.rng_seed,
            &format!("client:{client_id}"),
        ))
    }
}

/// Dims and activations of a relu MLP with a single sigmoid output.
pub fn classifier_shape(input_dim: usize, hidden: &[usize]) -> (Vec<usize>, Vec<Activation>) {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Sigmoid);
    (dims, acts)
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub client_id: String,
    pub round: u32,
    pub params: ModelParams,
    pub sample_count: u64,
    /// Mean training loss of the client's last local epoch.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    /// `(client_id, loss)` in ascending id order.
    pub losses: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedOutcome {
    pub global: ModelParams,
    pub history: Vec<RoundRecord>,
}
