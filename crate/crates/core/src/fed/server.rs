use std::collections::BTreeMap;

use super::{fedavg_aggregate, FedConfig, FederatedOutcome, RoundRecord, RoundUpdate};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

#[derive(Debug, Clone)]
struct Registration {
    sample_count: u64,
}

/// Server half of the FedAvg protocol: a registration phase followed by
/// `rounds` barriers, each closed by aggregation once every registered
/// client has submitted.
#[derive(Debug, Clone)]
pub struct FedServer {
    cfg: FedConfig,
    global: ModelParams,
    layout: Option<Vec<String>>,
    clients: BTreeMap<String, Registration>,
    round: u32,
    pending: BTreeMap<String, RoundUpdate>,
    history: Vec<RoundRecord>,
}

impl FedServer {
    /// `expected_layout`, when given, pins the column names every client
    /// must present; otherwise the first registration sets it.
    pub fn new(
        cfg: FedConfig,
        initial: ModelParams,
        expected_layout: Option<Vec<String>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(l) = &expected_layout {
            if l.len() != initial.input_dim() {
                return Err(Error::Config(format!(
                    "layout has {} columns, global model expects {}",
                    l.len(),
                    initial.input_dim()
                )));
            }
        }
        Ok(Self {
            cfg,
            global: initial,
            layout: expected_layout,
            clients: BTreeMap::new(),
            round: 0,
            pending: BTreeMap::new(),
            history: Vec::new(),
        })
    }

    pub fn register(
        &mut self,
        client_id: &str,
        sample_count: u64,
        layout: &[String],
    ) -> Result<()> {
        if self.clients.len() >= self.cfg.expected_clients {
            return Err(Error::Protocol(format!(
                "`{client_id}` registered but all {} clients are present",
                self.cfg.expected_clients
            )));
        }
        if self.clients.contains_key(client_id) {
            return Err(Error::Protocol(format!(
                "client id `{client_id}` registered twice"
            )));
        }
        if sample_count == 0 {
            return Err(Error::Protocol(format!(
                "`{client_id}` has no training rows"
            )));
        }
        if layout.len() != self.global.input_dim() {
            return Err(Error::Protocol(format!(
                "`{client_id}` presents {} columns, global model expects {}",
                layout.len(),
                self.global.input_dim()
            )));
        }
        match &self.layout {
            Some(expected) if expected.as_slice() != layout => {
                let at = expected
                    .iter()
                    .zip(layout)
                    .position(|(a, b)| a != b)
                    .unwrap_or(0);
                return Err(Error::Protocol(format!(
                    "`{client_id}` column layout mismatch at column {at}: `{}` vs expected `{}`",
                    layout[at], expected[at]
                )));
            }
            Some(_) => {}
            None => self.layout = Some(layout.to_vec()),
        }
        self.clients
            .insert(client_id.to_string(), Registration { sample_count });
        Ok(())
    }

    pub fn all_registered(&self) -> bool {
        self.clients.len() == self.cfg.expected_clients
    }

    pub fn finished(&self) -> bool {
        self.round >= self.cfg.rounds
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn client_ids(&self) -> impl Iterator<Item = &str> {
        self.clients.keys().map(String::as_str)
    }

    /// Accepts one update; returns `true` when it closed the round.
    pub fn submit(&mut self, update: RoundUpdate) -> Result<bool> {
        if !self.all_registered() {
            return Err(Error::Protocol(
                "update before registration completed".into(),
            ));
        }
        if self.finished() {
            return Err(Error::Protocol(format!(
                "`{}` sent an update after the last round",
                update.client_id
            )));
        }
        let reg = self.clients.get(&update.client_id).ok_or_else(|| {
            Error::Protocol(format!(
                "update from unregistered client `{}`",
                update.client_id
            ))
        })?;
        if update.round != self.round {
            return Err(Error::Protocol(format!(
                "`{}` sent round {}, server is in round {}",
                update.client_id, update.round, self.round
            )));
        }
        if update.sample_count != reg.sample_count {
            return Err(Error::Protocol(format!(
                "`{}` changed its sample count from {} to {}",
                update.client_id, reg.sample_count, update.sample_count
            )));
        }
        if !update.params.same_shape(&self.global) {
            return Err(Error::Protocol(format!(
                "`{}` sent parameters of the wrong shape",
                update.client_id
            )));
        }
        if self.pending.contains_key(&update.client_id) {
            return Err(Error::Protocol(format!(
                "`{}` sent two updates in round {}",
                update.client_id, self.round
            )));
        }
        self.pending.insert(update.client_id.clone(), update);
        if self.pending.len() < self.clients.len() {
            return Ok(false);
        }
        let updates: Vec<RoundUpdate> = std::mem::take(&mut self.pending).into_values().collect();
        self.global = fedavg_aggregate(&updates)?;
        self.history.push(RoundRecord {
            round: self.round,
            losses: updates
                .into_iter()
                .map(|u| (u.client_id, u.train_loss))
                .collect(),
        });
        self.round += 1;
        Ok(true)
    }

    pub fn into_outcome(self) -> FederatedOutcome {
        FederatedOutcome {
            global: self.global,
            history: self.history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation};

    fn server(clients: usize) -> FedServer {
        let cfg = FedConfig {
            rounds: 2,
            expected_clients: clients,
            ..FedConfig::default()
        };
        let init = init_params(&[2, 1], &[Activation::Sigmoid], 0).unwrap();
        FedServer::new(cfg, init, None).unwrap()
    }

    fn layout(a: &str) -> Vec<String> {
        vec![a.to_string(), "b".to_string()]
    }

    fn update(s: &FedServer, id: &str, n: u64) -> RoundUpdate {
        RoundUpdate {
            client_id: id.into(),
            round: s.round(),
            params: s.global().clone(),
            sample_count: n,
            train_loss: 0.5,
        }
    }

    #[test]
    fn layout_mismatch_rejected_at_registration() {
        let mut s = server(2);
        s.register("a", 10, &layout("a")).unwrap();
        let err = s.register("b", 10, &layout("x")).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(s.register("c", 10, &["only-one".to_string()]).is_err());
    }

    #[test]
    fn round_barrier_and_history() {
        let mut s = server(2);
        s.register("b", 3, &layout("a")).unwrap();
        s.register("a", 1, &layout("a")).unwrap();
        assert!(s.all_registered());
        assert!(!s.submit(update(&s, "b", 3)).unwrap());
        assert!(s.submit(update(&s, "a", 1)).unwrap());
        assert_eq!(s.round(), 1);
        // stale round
        let mut stale = update(&s, "a", 1);
        stale.round = 0;
        assert!(s.submit(stale).is_err());
        assert!(!s.submit(update(&s, "a", 1)).unwrap());
        assert!(s.submit(update(&s, "a", 1)).is_err());
        assert!(s.submit(update(&s, "b", 3)).unwrap());
        assert!(s.finished());
        let out = s.into_outcome();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[0].losses[0].0, "a");
    }

    #[test]
    fn unknown_and_surplus_clients() {
        let mut s = server(1);
        s.register("a", 5, &layout("a")).unwrap();
        assert!(s.register("b", 5, &layout("a")).is_err());
        assert!(s.submit(update(&s, "zzz", 5)).is_err());
        assert!(s.submit(update(&s, "a", 6)).is_err());
    }
}
