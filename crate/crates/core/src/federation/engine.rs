use std::time::Instant;

use rayon::prelude::*;

use super::client::{local_train, ClientMethod, ClientUpdate};
use super::FederationConfig;
use crate::aggregation::{aggregate, aggregate_fedavg, AggregatorSpec};
use crate::data::Dataset;
use crate::diagnostics::RoundMetrics;
use crate::error::{Error, Result};
use crate::model::{evaluate, DenseLayer, LoraAdapter};

/// SCAFFOLD control variates: the server's `c` and one `c_i` per client.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldState {
    pub server: Vec<LoraAdapter>,
    pub clients: Vec<Vec<LoraAdapter>>,
}

/// Everything the server owns between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub layers: Vec<DenseLayer>,
    pub adapters: Vec<LoraAdapter>,
    /// Index of the next round to run.
    pub round: usize,
    pub scaffold: Option<ScaffoldState>,
}

impl ServerState {
    pub fn new(
        layers: Vec<DenseLayer>,
        adapters: Vec<LoraAdapter>,
        method: ClientMethod,
        num_clients: usize,
    ) -> Self {
        let scaffold = matches!(method, ClientMethod::Scaffold {}).then(|| {
            let zeros: Vec<LoraAdapter> = adapters.iter().map(LoraAdapter::zeros_like).collect();
            ScaffoldState {
                server: zeros.clone(),
                clients: vec![zeros; num_clients],
            }
        });
        Self {
            layers,
            adapters,
            round: 0,
            scaffold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub metrics: RoundMetrics,
    /// Client deltas in client-id order.
    pub updates: Vec<ClientUpdate>,
}

/// One broadcast / train / aggregate round with full participation.
///
/// Clients may train concurrently; their updates are always collected and
/// aggregated in client-id order, so the result does not depend on the
/// thread count.
pub fn run_round(
    server: &mut ServerState,
    clients: &[Dataset],
    aggregator: &AggregatorSpec,
    cfg: &FederationConfig,
    test: &Dataset,
) -> Result<RoundOutcome> {
    let round = server.round;
    let wrap = |e: Error| Error::Round { round, source: Box::new(e) };
    let start = Instant::now();

    let snapshot: &ServerState = server;
    let results = clients
        .par_iter()
        .enumerate()
        .map(|(id, data)| local_train(snapshot, id, data, cfg))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;

    let mut updates = Vec::with_capacity(results.len());
    let mut controls = Vec::with_capacity(results.len());
    for r in results {
        updates.push(r.update);
        controls.push(r.control);
    }

    let agg = aggregate(aggregator, &updates).map_err(wrap)?;
    for (ad, d) in server.adapters.iter_mut().zip(&agg.deltas) {
        ad.a.axpy(1.0, &d.a).map_err(wrap)?;
        ad.b.axpy(1.0, &d.b).map_err(wrap)?;
    }

    if let Some(state) = server.scaffold.as_mut() {
        for (slot, c) in state.clients.iter_mut().zip(controls) {
            if let Some(c) = c {
                *slot = c;
            }
        }
        // full participation: c is the mean of all c_i
        let as_updates: Vec<ClientUpdate> = state
            .clients
            .iter()
            .enumerate()
            .map(|(client_id, layers)| ClientUpdate { client_id, layers: layers.clone() })
            .collect();
        state.server = aggregate_fedavg(&as_updates).map_err(wrap)?;
    }

    let (test_loss, test_accuracy) = evaluate(&server.layers, &server.adapters, test).map_err(wrap)?;
    let elapsed = start.elapsed().as_secs_f64();
    server.round += 1;
    Ok(RoundOutcome {
        metrics: RoundMetrics {
            round: round as i64,
            aggregator: aggregator.name().to_string(),
            test_accuracy,
            test_loss,
            wall_seconds: if cfg.record_wall_clock { elapsed } else { 0.0 },
            rpca: agg.trace,
        },
        updates,
    })
}

/// Frozen base, starting adapters, client shards and the held-out test set.
#[derive(Clone, Debug)]
pub struct FederatedSetup {
    pub layers: Vec<DenseLayer>,
    pub adapters: Vec<LoraAdapter>,
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Evaluation before any round, recorded as round `-1`.
    pub initial: RoundMetrics,
    pub rounds: Vec<RoundMetrics>,
    pub server: ServerState,
}

/// Evaluation of the starting adapters, recorded as round `-1`.
pub fn initial_metrics(setup: &FederatedSetup, aggregator: &AggregatorSpec) -> Result<RoundMetrics> {
    let (test_loss, test_accuracy) = evaluate(&setup.layers, &setup.adapters, &setup.test)?;
    Ok(RoundMetrics {
        round: -1,
        aggregator: aggregator.name().to_string(),
        test_accuracy,
        test_loss,
        wall_seconds: 0.0,
        rpca: Vec::new(),
    })
}

/// Runs `cfg.rounds` rounds, calling `on_round` after each one.
pub fn run(
    cfg: &FederationConfig,
    aggregator: &AggregatorSpec,
    setup: FederatedSetup,
    mut on_round: impl FnMut(&RoundOutcome) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    aggregator.validate()?;
    if setup.clients.len() != cfg.num_clients {
        return Err(Error::invalid(format!(
            "{} client shards for {} clients",
            setup.clients.len(),
            cfg.num_clients
        )));
    }
    let initial = initial_metrics(&setup, aggregator)?;
    let mut server = ServerState::new(setup.layers, setup.adapters, cfg.client_method, cfg.num_clients);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let outcome = run_round(&mut server, &setup.clients, aggregator, cfg, &setup.test)?;
        on_round(&outcome)?;
        rounds.push(outcome.metrics);
    }
    Ok(RunOutput { initial, rounds, server })
}
