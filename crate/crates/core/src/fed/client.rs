use super::wire::Message;
use super::RoundUpdate;
use crate::error::{Error, Result};
use crate::nn::{ClassWeights, Matrix, ModelParams, TrainConfig, Trainer};

/// One client's training data over the common feature group.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub client_id: String,
    pub x: Matrix,
    pub labels: Vec<u8>,
    pub weights: ClassWeights,
    /// Encoded column names; every client must present the same list.
    pub layout: Vec<String>,
}

/// Client half of the FedAvg protocol. The optimizer moments and shuffle
/// stream persist across rounds.
#[derive(Debug, Clone)]
pub struct FedClient {
    data: ClientData,
    trainer: Trainer,
    local_epochs: usize,
    last_round: Option<u32>,
}

impl FedClient {
    pub fn new(data: ClientData, train: TrainConfig, local_epochs: usize) -> Result<Self> {
        if data.x.rows() == 0 || data.x.rows() != data.labels.len() {
            return Err(Error::Shape(format!(
                "client `{}`: {} rows, {} labels",
                data.client_id,
                data.x.rows(),
                data.labels.len()
            )));
        }
        if data.layout.len() != data.x.cols() {
            return Err(Error::Shape(format!(
                "client `{}`: layout names {} columns, matrix has {}",
                data.client_id,
                data.layout.len(),
                data.x.cols()
            )));
        }
        if local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        Ok(Self {
            data,
            trainer: Trainer::new(train)?,
            local_epochs,
            last_round: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.data.client_id
    }

    pub fn sample_count(&self) -> u64 {
        self.data.x.rows() as u64
    }

    pub fn register_message(&self) -> Message {
        Message::Register {
            client_id: self.data.client_id.clone(),
            sample_count: self.sample_count(),
            layout: self.data.layout.clone(),
        }
    }

    /// Starts from the broadcast model and trains locally.
    pub fn train_round(&mut self, round: u32, global: &ModelParams) -> Result<RoundUpdate> {
        if let Some(prev) = self.last_round {
            if round != prev + 1 {
                return Err(Error::Protocol(format!(
                    "client `{}` got round {round} after round {prev}",
                    self.data.client_id
                )));
            }
        }
        self.last_round = Some(round);
        let mut params = global.clone();
        let mut loss = f64::NAN;
        for _ in 0..self.local_epochs {
            loss = self.trainer.run_epoch(
                &mut params,
                &self.data.x,
                &self.data.labels,
                &self.data.weights,
            )?;
        }
        Ok(RoundUpdate {
            client_id: self.data.client_id.clone(),
            round,
            params,
            sample_count: self.sample_count(),
            train_loss: loss,
        })
    }
}
