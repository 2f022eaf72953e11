//! Synchronous federated averaging over simulated clients.
//!
//! Each round the server broadcasts its parameters, every client trains on
//! its own data, and the server averages the returned parameters. Clients
//! only ever hand back parameters and a training loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelParams};
use crate::seed::{hash_str, mix};
use crate::train::{evaluate, train_local, AdamState, DpConfig, MetricsReport};

/// Bytes per transmitted parameter (float32 accounting).
pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    WeightedBySamples,
}

/// One hospital: private data plus its local model and optimizer.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: String,
    dataset: Dataset,
    params: ModelParams,
    opt: AdamState,
    dp: Option<DpConfig>,
}

impl ClientState {
    pub fn new(
        id: impl Into<String>,
        dataset: Dataset,
        params: ModelParams,
        opt: AdamState,
        dp: Option<DpConfig>,
    ) -> Self {
        Self {
            id: id.into(),
            dataset,
            params,
            opt,
            dp,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_samples(&self) -> usize {
        self.dataset.len()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Trains the local model in place and returns the last-epoch loss.
    pub fn local_update(
        &mut self,
        classifier: &Classifier,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<f64> {
        let (params, loss) = train_local(
            classifier,
            &self.params,
            &self.dataset,
            epochs,
            batch_size,
            &mut self.opt,
            self.dp.as_ref(),
            seed,
        )?;
        self.params = params;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: ModelParams,
    pub round: usize,
    pub server_lr: f64,
    pub aggregation: Aggregation,
}

impl ServerState {
    pub fn new(global_params: ModelParams, server_lr: f64, aggregation: Aggregation) -> Self {
        Self {
            global_params,
            round: 0,
            server_lr,
            aggregation,
        }
    }
}

/// Parameters a client returns at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub id: String,
    pub params: ModelParams,
    pub n_samples: usize,
}

/// Copies the global parameters into every client.
pub fn broadcast(server: &ServerState, clients: &mut [ClientState]) -> Result<()> {
    for c in clients.iter() {
        if c.params.arch != server.global_params.arch
            || c.params.len() != server.global_params.len()
        {
            return Err(Error::Contract(format!(
                "client {} has a different model shape",
                c.id
            )));
        }
    }
    for c in clients.iter_mut() {
        c.params = server.global_params.clone();
    }
    Ok(())
}

/// Federated averaging with server step size `η_s`:
/// `θ ← θ − η_s (θ − θ̄)`, where `θ̄` is the (weighted) client mean summed
/// in client-id order.
pub fn aggregate(server: &mut ServerState, updates: &[ClientUpdate]) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::Contract("no client updates to aggregate".into()));
    }
    let n = server.global_params.len();
    for u in updates {
        if u.params.arch != server.global_params.arch || u.params.len() != n {
            return Err(Error::Contract(format!(
                "update from {} has a different model shape",
                u.id
            )));
        }
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let weights: Vec<f64> = match server.aggregation {
        Aggregation::Mean => vec![1.0 / ordered.len() as f64; ordered.len()],
        Aggregation::WeightedBySamples => {
            let total: usize = ordered.iter().map(|u| u.n_samples).sum();
            if total == 0 {
                return Err(Error::Contract(
                    "weighted aggregation over zero samples".into(),
                ));
            }
            ordered
                .iter()
                .map(|u| u.n_samples as f64 / total as f64)
                .collect()
        }
    };

    let mut mean = vec![0.0; n];
    for (u, w) in ordered.iter().zip(&weights) {
        for (m, p) in mean.iter_mut().zip(u.params.to_flat()) {
            *m += w * p;
        }
    }
    let next: Vec<f64> = if server.server_lr == 1.0 {
        mean
    } else {
        server
            .global_params
            .to_flat()
            .iter()
            .zip(&mean)
            .map(|(g, m)| g - server.server_lr * (g - m))
            .collect()
    };
    server.global_params.set_flat(&next)?;
    server.round += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub id: String,
    pub train_loss: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub per_client: Vec<ClientRound>,
    pub global_metrics: MetricsReport,
    /// Cumulative over all rounds so far.
    pub bytes_exchanged: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub target_accuracy: f64,
    pub patience: usize,
}

#[derive(Debug)]
pub struct RoundFailure {
    pub round: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct FederationOutcome {
    pub history: Vec<RoundReport>,
    /// Set when a round failed; `history` then holds the rounds before it.
    pub failure: Option<RoundFailure>,
}

/// Seed of one client's local training in one round.
pub fn client_seed(seed: u64, round: usize, client_id: &str) -> u64 {
    mix(&[seed, round as u64, hash_str(client_id)])
}

/// Server, clients and held-out test data of one simulated federation.
pub struct Federation {
    classifier: Classifier,
    server: ServerState,
    clients: Vec<ClientState>,
    test_set: Dataset,
    settings: RoundSettings,
    bytes_exchanged: u64,
}

impl Federation {
    pub fn new(
        classifier: Classifier,
        server: ServerState,
        clients: Vec<ClientState>,
        test_set: Dataset,
        settings: RoundSettings,
    ) -> Result<Self> {
        classifier.check_params(&server.global_params)?;
        if settings.local_epochs == 0 {
            return Err(Error::Contract("local epochs must be >= 1".into()));
        }
        if test_set.is_empty() {
            return Err(Error::Contract("test set is empty".into()));
        }
        Ok(Self {
            classifier,
            server,
            clients,
            test_set,
            settings,
            bytes_exchanged: 0,
        })
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn bytes_exchanged(&self) -> u64 {
        self.bytes_exchanged
    }

    /// Broadcast, local training, aggregation and test-set evaluation.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        broadcast(&self.server, &mut self.clients)?;
        let round = self.server.round;
        let s = self.settings;
        let classifier = &self.classifier;
        let losses = self
            .clients
            .par_iter_mut()
            .map(|c| {
                let seed = client_seed(s.seed, round, &c.id);
                c.local_update(classifier, s.local_epochs, s.batch_size, seed)
            })
            .collect::<Vec<Result<f64>>>()
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;

        let updates: Vec<ClientUpdate> = self
            .clients
            .iter()
            .map(|c| ClientUpdate {
                id: c.id.clone(),
                params: c.params.clone(),
                n_samples: c.n_samples(),
            })
            .collect();
        aggregate(&mut self.server, &updates)?;
        if !self.server.global_params.is_finite() {
            return Err(Error::Numeric(
                "aggregated parameters are not finite".into(),
            ));
        }

        self.bytes_exchanged += round_bytes(self.clients.len(), self.classifier.n_params());
        let global_metrics = evaluate(
            &self.classifier,
            &self.server.global_params,
            &self.test_set,
            s.threshold,
        )?;
        Ok(RoundReport {
            round: self.server.round,
            per_client: self
                .clients
                .iter()
                .zip(losses)
                .map(|(c, train_loss)| ClientRound {
                    id: c.id.clone(),
                    train_loss,
                    n_samples: c.n_samples(),
                })
                .collect(),
            global_metrics,
            bytes_exchanged: self.bytes_exchanged,
        })
    }

    /// Runs up to `rounds` rounds, stopping early once test accuracy has
    /// reached the target for `patience` consecutive rounds.
    pub fn run(&mut self, rounds: usize, early_stop: Option<EarlyStop>) -> FederationOutcome {
        let mut history = Vec::with_capacity(rounds);
        let mut streak = 0;
        for _ in 0..rounds {
            match self.run_round() {
                Ok(report) => {
                    let acc = report.global_metrics.accuracy;
                    history.push(report);
                    if let Some(stop) = early_stop {
                        streak = if acc >= stop.target_accuracy {
                            streak + 1
                        } else {
                            0
                        };
                        if streak >= stop.patience.max(1) {
                            break;
                        }
                    }
                }
                Err(error) => {
                    return FederationOutcome {
                        history,
                        failure: Some(RoundFailure {
                            round: self.server.round + 1,
                            error,
                        }),
                    }
                }
            }
        }
        FederationOutcome {
            history,
            failure: None,
        }
    }
}

/// Bytes moved in one round: every client downloads and uploads all
/// parameters.
pub fn round_bytes(n_clients: usize, n_params: usize) -> u64 {
    2 * n_clients as u64 * n_params as u64 * BYTES_PER_PARAM
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, HeadKind};
    use crate::qtn::{BlockKind, TopologyKind};

    fn classifier() -> Classifier {
        Classifier::new(Architecture {
            topology: TopologyKind::Mps,
            block: BlockKind::Simple,
            patch_side: 2,
            n_patches: 1,
            head: HeadKind::Gap,
        })
        .unwrap()
    }

    fn with(c: &Classifier, values: &[f64]) -> ModelParams {
        let mut p = c.init_params(0);
        p.set_flat(values).unwrap();
        p
    }

    fn update(id: &str, params: ModelParams, n: usize) -> ClientUpdate {
        ClientUpdate {
            id: id.into(),
            params,
            n_samples: n,
        }
    }

    #[test]
    fn mean_of_two_clients() {
        let c = classifier();
        let zeros = vec![0.0; c.n_params()];
        let mut a = zeros.clone();
        let mut b = zeros.clone();
        a[0] = 1.0;
        a[1] = 3.0;
        b[0] = 3.0;
        b[1] = 5.0;
        let mut server = ServerState::new(with(&c, &zeros), 1.0, Aggregation::Mean);
        aggregate(
            &mut server,
            &[update("H1", with(&c, &a), 1), update("H2", with(&c, &b), 1)],
        )
        .unwrap();
        assert_eq!(&server.global_params.to_flat()[..2], &[2.0, 4.0]);
        assert_eq!(server.round, 1);
    }

    #[test]
    fn server_learning_rate() {
        let c = classifier();
        let zeros = vec![0.0; c.n_params()];
        let mut a = zeros.clone();
        a[0] = 2.0;
        a[1] = 4.0;
        let mut server = ServerState::new(with(&c, &zeros), 0.5, Aggregation::Mean);
        aggregate(&mut server, &[update("H1", with(&c, &a), 3)]).unwrap();
        assert_eq!(&server.global_params.to_flat()[..2], &[1.0, 2.0]);
    }

    #[test]
    fn weighted_and_fixed_point() {
        let c = classifier();
        let g = c.init_params(4);
        let mut server = ServerState::new(g.clone(), 1.0, Aggregation::Mean);
        aggregate(
            &mut server,
            &[update("H1", g.clone(), 1), update("H2", g.clone(), 9)],
        )
        .unwrap();
        assert_eq!(server.global_params, g);

        let n = c.n_params();
        let mut server =
            ServerState::new(with(&c, &vec![0.0; n]), 1.0, Aggregation::WeightedBySamples);
        aggregate(
            &mut server,
            &[
                update("H1", with(&c, &vec![1.0; n]), 1),
                update("H2", with(&c, &vec![5.0; n]), 3),
            ],
        )
        .unwrap();
        assert!(server
            .global_params
            .to_flat()
            .iter()
            .all(|v| (*v - 4.0).abs() < 1e-15));
        assert!(aggregate(&mut server, &[]).is_err());
    }

    #[test]
    fn broadcast_copies_and_checks_shape() {
        let c = classifier();
        let server = ServerState::new(c.init_params(1), 1.0, Aggregation::Mean);
        broadcast(&server, &mut []).unwrap();

        let mk = |seed| {
            ClientState::new(
                format!("H{seed}"),
                Dataset::default(),
                c.init_params(seed),
                AdamState::new(c.n_params(), 0.001, 0.0),
                None,
            )
        };
        let mut clients: Vec<_> = (2..6).map(mk).collect();
        broadcast(&server, &mut clients).unwrap();
        assert!(clients
            .iter()
            .all(|cl| cl.params() == &server.global_params));

        let other = Classifier::new(Architecture {
            topology: TopologyKind::Ttn,
            block: BlockKind::Simple,
            patch_side: 2,
            n_patches: 1,
            head: HeadKind::Gap,
        })
        .unwrap();
        clients[0].params = other.init_params(0);
        assert!(matches!(
            broadcast(&server, &mut clients),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn byte_accounting() {
        assert_eq!(round_bytes(4, 12), 384);
    }
}
