//! Round loop: local training, aggregation, evaluation.

use std::thread;

use flame_core::{run_round, ModelVector, PipelineError, RoundConfig};
use flame_service::{Client, ClientTrust, DeviceKey, Server, ServerHandle, ServiceConfig, ServiceError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracing::info;

use crate::client::ClientSim;
use crate::metrics::RoundMetrics;
use crate::scenario::{Scenario, ScenarioError, Transport};
use crate::task::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("aggregation failed: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("scheduler: {0}")]
    Service(#[from] ServiceError),
    #[error("scheduler: {0}")]
    Io(#[from] std::io::Error),
    #[error("client {client} produced a non-finite model")]
    NonFiniteLocal { client: usize },
    #[error("round {round}: {message}")]
    Round { round: u64, message: String },
}

/// Clients, held-out data and the initial model of a scenario.
pub struct Setup {
    pub clients: Vec<ClientSim>,
    pub test: Dataset,
    pub backdoor: Dataset,
    pub initial: ModelVector,
}

impl Setup {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let task = &scenario.task;
        let clients = (0..scenario.clients)
            .map(|id| {
                if id < scenario.malicious {
                    ClientSim::malicious(id, task, scenario.samples_per_client, scenario.seed, &scenario.attack)
                } else {
                    ClientSim::benign(id, task, scenario.samples_per_client, scenario.seed)
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let test = task.generate(&mut rng, scenario.test_samples);
        let backdoor = task.backdoor_eval(&test);
        let initial = ModelVector::new(scenario.model.init(task.feature_dim, &mut rng))
            .expect("initial parameters are finite");
        Ok(Self {
            clients,
            test,
            backdoor,
            initial,
        })
    }
}

/// One aggregation step; returns the new global model and the per-client labels.
trait Aggregator {
    fn aggregate(&mut self, round: u64, global: &ModelVector, locals: Vec<ModelVector>)
        -> Result<(ModelVector, Vec<u8>), ExperimentError>;
}

struct InProcess {
    config: RoundConfig,
    defense: flame_core::Defense,
    seed: u64,
}

impl Aggregator for InProcess {
    fn aggregate(
        &mut self,
        round: u64,
        global: &ModelVector,
        locals: Vec<ModelVector>,
    ) -> Result<(ModelVector, Vec<u8>), ExperimentError> {
        let config = self.config.clone().with_seed(self.seed.wrapping_add(round));
        let outcome = run_round(global, &locals, &config, self.defense)?;
        Ok((outcome.model, outcome.labels.labels().to_vec()))
    }
}

struct Networked {
    server: Option<ServerHandle>,
    clients: Vec<Client>,
}

impl Networked {
    fn start(scenario: &Scenario, initial: &ModelVector) -> Result<Self, ExperimentError> {
        let trust = ClientTrust {
            device_key: DeviceKey([0x42; 32]),
            measurement: flame_service::attest::measure(b"flame-harness"),
        };
        let mut config = ServiceConfig::new(trust.device_key.clone(), trust.measurement, initial.clone(), scenario.clients);
        config.stages = scenario.stages;
        config.noise_range = scenario.lambda;
        config.seed = scenario.seed;
        config.defense = scenario.defense;
        let server = Server::bind(config)?.spawn(Some(scenario.rounds))?;
        // ids are handed out in connection order, so client i gets id i
        let mut clients = Vec::with_capacity(scenario.clients);
        for _ in 0..scenario.clients {
            let mut client = Client::connect(server.addr, &trust)?;
            client.next_global()?;
            clients.push(client);
        }
        Ok(Self {
            server: Some(server),
            clients,
        })
    }

    fn finish(mut self) -> Result<(), ExperimentError> {
        if let Some(server) = self.server.take() {
            server.join()?;
        }
        Ok(())
    }
}

impl Aggregator for Networked {
    fn aggregate(
        &mut self,
        round: u64,
        _global: &ModelVector,
        locals: Vec<ModelVector>,
    ) -> Result<(ModelVector, Vec<u8>), ExperimentError> {
        let results: Vec<Result<(u64, ModelVector), ServiceError>> = thread::scope(|scope| {
            let handles: Vec<_> = self
                .clients
                .iter_mut()
                .zip(&locals)
                .map(|(client, local)| {
                    scope.spawn(move || {
                        client.submit(round, local)?;
                        client.next_global()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
        });
        let mut next = None;
        for result in results {
            let (r, model) = result?;
            if r != round + 1 || next.as_ref().is_some_and(|m| m != &model) {
                return Err(ExperimentError::Round {
                    round,
                    message: "clients received different global models".into(),
                });
            }
            next = Some(model);
        }
        let server = self.server.as_ref().expect("server running");
        let record = server
            .scheduler
            .history()
            .into_iter()
            .find(|r| r.round == round)
            .ok_or_else(|| ExperimentError::Round {
                round,
                message: "no record".into(),
            })?;
        if let Some(message) = record.error {
            return Err(ExperimentError::Round { round, message });
        }
        Ok((next.expect("at least one client"), record.labels))
    }
}

/// Runs every round of `scenario` and evaluates the global model after each.
pub fn run_experiment(scenario: &Scenario) -> Result<Vec<RoundMetrics>, ExperimentError> {
    let Setup {
        mut clients,
        test,
        backdoor,
        initial,
    } = Setup::new(scenario)?;
    let params = initial.len();
    match scenario.transport {
        Transport::InProcess => {
            let mut agg = InProcess {
                config: RoundConfig::new(scenario.clients, params)
                    .with_stages(scenario.stages)
                    .with_noise_range(scenario.lambda),
                defense: scenario.defense,
                seed: scenario.seed,
            };
            rounds(scenario, &mut clients, &test, &backdoor, initial, &mut agg)
        }
        Transport::Service => {
            let mut agg = Networked::start(scenario, &initial)?;
            let metrics = rounds(scenario, &mut clients, &test, &backdoor, initial, &mut agg)?;
            agg.finish()?;
            Ok(metrics)
        }
    }
}

fn rounds(
    scenario: &Scenario,
    clients: &mut [ClientSim],
    test: &Dataset,
    backdoor: &Dataset,
    initial: ModelVector,
    agg: &mut dyn Aggregator,
) -> Result<Vec<RoundMetrics>, ExperimentError> {
    let kind = scenario.model;
    let target = scenario.task.target_label;
    let mut global = initial;
    let mut metrics = Vec::with_capacity(scenario.rounds);
    for round in 0..scenario.rounds as u64 {
        let locals = clients
            .par_iter_mut()
            .map(|client| {
                let params = client.train_local(kind, global.params(), &scenario.train);
                ModelVector::new(params).map_err(|_| ExperimentError::NonFiniteLocal { client: client.id })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (next, labels) = agg.aggregate(round, &global, locals)?;
        global = next;

        let mut row = RoundMetrics {
            round: round as usize + 1,
            ma: kind.accuracy(global.params(), test),
            ba: kind.rate_of(global.params(), backdoor, target),
            accepted: 0,
            rejected_malicious: 0,
            rejected_benign: 0,
            accepted_malicious: 0,
        };
        for (client, &label) in clients.iter().zip(&labels) {
            match (label == 1, client.is_malicious()) {
                (true, true) => {
                    row.accepted += 1;
                    row.accepted_malicious += 1;
                }
                (true, false) => row.accepted += 1,
                (false, true) => row.rejected_malicious += 1,
                (false, false) => row.rejected_benign += 1,
            }
        }
        info!(
            round = row.round,
            ma = row.ma,
            ba = row.ba,
            accepted = row.accepted,
            rejected_malicious = row.rejected_malicious,
            "round finished"
        );
        metrics.push(row);
    }
    Ok(metrics)
}
