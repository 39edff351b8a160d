use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FederationConfig, ServerState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{loss_and_grad, DenseLayer, GradientSet, LoraAdapter};
use crate::rng::derive_seed;

/// Client-side objective / update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMethod {
    Plain {},
    /// Adds `(mu / 2) ||theta - theta_global||^2` to the local loss.
    Fedprox { mu: f64 },
    /// Steps along `g - c_i + c` and refreshes `c_i` after training.
    Scaffold {},
}

impl Default for ClientMethod {
    fn default() -> Self {
        ClientMethod::Plain {}
    }
}

/// Per-layer `(dA, dB)` a client sends back, relative to the broadcast
/// adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub layers: Vec<LoraAdapter>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResult {
    pub update: ClientUpdate,
    /// Refreshed SCAFFOLD control variate `c_i`.
    pub control: Option<Vec<LoraAdapter>>,
    pub steps: usize,
}

/// Local loss plus the FedProx proximal term, and its gradient.
pub fn fedprox_loss_and_grad(
    layers: &[DenseLayer],
    adapters: &[LoraAdapter],
    global: &[LoraAdapter],
    mu: f64,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    let (mut loss, mut grads) = loss_and_grad(layers, adapters, x, labels)?;
    if mu != 0.0 {
        for ((g, p), p0) in grads.iter_mut().zip(adapters).zip(global) {
            for (gm, (pm, p0m)) in [(&mut g.a, (&p.a, &p0.a)), (&mut g.b, (&p.b, &p0.b))] {
                let diff = pm.sub(p0m)?;
                loss += 0.5 * mu * diff.dot(&diff)?;
                gm.axpy(mu, &diff)?;
            }
        }
    }
    Ok((loss, grads))
}

fn sub_adapters(lhs: &[LoraAdapter], rhs: &[LoraAdapter]) -> Result<Vec<LoraAdapter>> {
    lhs.iter()
        .zip(rhs)
        .map(|(l, r)| Ok(LoraAdapter { a: l.a.sub(&r.a)?, b: l.b.sub(&r.b)? }))
        .collect()
}

/// Runs `local_epochs` of shuffled minibatch steps from the broadcast
/// adapters and returns the delta. The shuffle stream is derived from
/// `(seed, round, client_id)`. Optimizer state starts fresh every round.
pub fn local_train(
    server: &ServerState,
    client_id: usize,
    data: &Dataset,
    cfg: &FederationConfig,
) -> Result<LocalResult> {
    if data.is_empty() {
        return Err(Error::invalid(format!("client {client_id} holds no data")));
    }
    let global = &server.adapters;
    let controls = match (&cfg.client_method, &server.scaffold) {
        (ClientMethod::Scaffold {}, Some(state)) => {
            let ci = state.clients.get(client_id).ok_or_else(|| {
                Error::invalid(format!("no control variate for client {client_id}"))
            })?;
            Some((&state.server, ci))
        }
        (ClientMethod::Scaffold {}, None) => {
            return Err(Error::invalid("scaffold training requires control variates"))
        }
        _ => None,
    };

    let mut adapters = global.clone();
    let mut opt = cfg.optimizer.build();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[server.round as u64, client_id as u64],
    ));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0usize;
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let mu = match cfg.client_method {
                ClientMethod::Fedprox { mu } => mu,
                _ => 0.0,
            };
            let (_, mut grads) =
                fedprox_loss_and_grad(&server.layers, &adapters, global, mu, &batch.features, &batch.labels)?;
            if let Some((c, ci)) = controls {
                for ((g, c), ci) in grads.iter_mut().zip(c).zip(ci) {
                    g.a.axpy(-1.0, &ci.a)?;
                    g.a.axpy(1.0, &c.a)?;
                    g.b.axpy(-1.0, &ci.b)?;
                    g.b.axpy(1.0, &c.b)?;
                }
            }
            opt.step(&mut adapters, &grads)?;
            steps += 1;
        }
    }

    let delta = sub_adapters(&adapters, global)?;
    let control = match controls {
        Some((c, ci)) => {
            let lr = cfg.optimizer.lr();
            let denom = steps as f64 * lr;
            // c_i <- c_i - c + (theta_global - theta_local) / (K lr)
            if denom > 0.0 {
                let mut next = sub_adapters(ci, c)?;
                for (n, d) in next.iter_mut().zip(&delta) {
                    n.a.axpy(-1.0 / denom, &d.a)?;
                    n.b.axpy(-1.0 / denom, &d.b)?;
                }
                Some(next)
            } else {
                // no movement to learn a correction from
                Some(ci.to_vec())
            }
        }
        None => None,
    };
    Ok(LocalResult {
        update: ClientUpdate { client_id, layers: delta },
        control,
        steps,
    })
}
