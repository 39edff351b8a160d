//! Server-side aggregation of client LoRA deltas.
//!
//! Every strategy operates on the per-layer stacks `M_A` (`r*d_in x M`) and
//! `M_B` (`d_out*r x M`) whose column `i` is the column-major `vec` of client
//! `i`'s delta, and returns one global `(dA, dB)` per layer.
//!
//! * [`aggregate_fedavg`]: column mean.
//! * [`aggregate_scaled`]: `beta` times the column mean.
//! * [`aggregate_ties`]: trim / elect sign / disjoint mean.
//! * [`aggregate_fedrpca`]: robust-PCA split `M = L + S`, then
//!   `mean(L) + beta * mean(S)` with a fixed or adaptive `beta`.

mod fedrpca;
mod ties;

pub use fedrpca::{adaptive_beta, aggregate_fedrpca, sparse_energy};
pub use ties::aggregate_ties;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::linalg::Matrix;
use crate::model::LoraAdapter;
use crate::rpca::RpcaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixKind {
    A,
    B,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::A => "A",
            MatrixKind::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum BetaMode {
    Fixed { beta: f64 },
    /// `beta = clamp(1 / E, 1, beta_max)` per layer and matrix kind.
    Adaptive {
        #[serde(default = "default_beta_max")]
        beta_max: f64,
    },
}

fn default_beta_max() -> f64 {
    10.0
}

impl Default for BetaMode {
    fn default() -> Self {
        BetaMode::Adaptive { beta_max: default_beta_max() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AggregatorSpec {
    Fedavg {},
    Scaled {
        #[serde(default = "default_scaled_beta")]
        beta: f64,
    },
    Ties {
        /// Fraction of entries *kept* per client during trimming.
        keep_fraction: f64,
    },
    Fedrpca {
        #[serde(default)]
        beta: BetaMode,
        #[serde(default)]
        rpca: RpcaConfig,
    },
}

fn default_scaled_beta() -> f64 {
    2.0
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        AggregatorSpec::Fedrpca {
            beta: BetaMode::default(),
            rpca: RpcaConfig::default(),
        }
    }
}

pub const AGGREGATOR_NAMES: [&str; 4] = ["fedavg", "scaled", "ties", "fedrpca"];

impl AggregatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::Fedavg {} => "fedavg",
            AggregatorSpec::Scaled { .. } => "scaled",
            AggregatorSpec::Ties { .. } => "ties",
            AggregatorSpec::Fedrpca { .. } => "fedrpca",
        }
    }

    /// Default-parameterized spec for a strategy name.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "fedavg" => AggregatorSpec::Fedavg {},
            "scaled" => AggregatorSpec::Scaled { beta: default_scaled_beta() },
            "ties" => AggregatorSpec::Ties { keep_fraction: 0.1 },
            "fedrpca" => AggregatorSpec::default(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AggregatorSpec::Fedavg {} => Ok(()),
            AggregatorSpec::Scaled { beta } => {
                if *beta > 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("aggregator.beta must be positive, got {beta}")))
                }
            }
            AggregatorSpec::Ties { keep_fraction } => {
                if *keep_fraction > 0.0 && *keep_fraction <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "aggregator.keep_fraction must lie in (0, 1], got {keep_fraction}"
                    )))
                }
            }
            AggregatorSpec::Fedrpca { beta, rpca } => {
                match *beta {
                    BetaMode::Fixed { beta } if !(beta > 0.0 && beta.is_finite()) => {
                        return Err(Error::Config(format!("aggregator.beta.beta must be positive, got {beta}")))
                    }
                    BetaMode::Adaptive { beta_max } if !(beta_max >= 1.0 && beta_max.is_finite()) => {
                        return Err(Error::Config(format!(
                            "aggregator.beta.beta_max must be at least 1, got {beta_max}"
                        )))
                    }
                    _ => {}
                }
                rpca.validate().map_err(|e| Error::Config(e.to_string()))
            }
        }
    }
}

/// Diagnostics for one `(layer, matrix)` pair of a FedRPCA aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTrace {
    pub layer: usize,
    pub matrix: MatrixKind,
    /// Sparse energy `||S 1|| / ||M 1||`; `None` when `||M 1|| = 0`.
    pub energy: Option<f64>,
    pub beta: f64,
    pub rpca_iterations: usize,
    pub rpca_residual: f64,
    pub converged: bool,
}

/// Global per-layer deltas plus any strategy diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub deltas: Vec<LoraAdapter>,
    pub trace: Vec<MatrixTrace>,
}

/// Column stacks of vectorized client deltas, one `(M_A, M_B)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedUpdates {
    pub layers: Vec<StackedLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedLayer {
    pub a: Matrix,
    pub b: Matrix,
    pub a_shape: (usize, usize),
    pub b_shape: (usize, usize),
}

impl StackedLayer {
    pub fn stack(&self, kind: MatrixKind) -> (&Matrix, (usize, usize)) {
        match kind {
            MatrixKind::A => (&self.a, self.a_shape),
            MatrixKind::B => (&self.b, self.b_shape),
        }
    }
}

impl StackedUpdates {
    pub fn num_clients(&self) -> usize {
        self.layers.first().map_or(0, |l| l.a.cols())
    }

    /// Every `(layer, kind)` pair in deterministic order.
    pub fn pairs(&self) -> Vec<(usize, MatrixKind)> {
        (0..self.layers.len())
            .flat_map(|l| [(l, MatrixKind::A), (l, MatrixKind::B)])
            .collect()
    }

    /// Applies `f` to every stack (each returning a column vector) and
    /// reshapes the results back into per-layer deltas.
    fn map_stacks(&self, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<Vec<LoraAdapter>> {
        self.layers
            .iter()
            .map(|l| {
                Ok(LoraAdapter {
                    a: f(&l.a)?.reshape(l.a_shape.0, l.a_shape.1)?,
                    b: f(&l.b)?.reshape(l.b_shape.0, l.b_shape.1)?,
                })
            })
            .collect()
    }
}

/// Builds `M_A`, `M_B` per layer with `M[:, i] = vec(delta_i)`.
pub fn stack_updates(updates: &[ClientUpdate]) -> Result<StackedUpdates> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty update list"))?;
    for u in updates {
        if u.layers.len() != first.layers.len() {
            return Err(Error::invalid(format!(
                "client {} sent {} layers, expected {}",
                u.client_id,
                u.layers.len(),
                first.layers.len()
            )));
        }
        for (l, f) in u.layers.iter().zip(&first.layers) {
            for (got, want) in [(&l.a, &f.a), (&l.b, &f.b)] {
                if got.shape() != want.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "stack_updates",
                        lhs: want.shape(),
                        rhs: got.shape(),
                    });
                }
            }
        }
    }
    let layers = (0..first.layers.len())
        .map(|k| {
            let cols_a: Vec<Matrix> = updates.iter().map(|u| u.layers[k].a.vec()).collect();
            let cols_b: Vec<Matrix> = updates.iter().map(|u| u.layers[k].b.vec()).collect();
            Ok(StackedLayer {
                a: Matrix::from_columns(&cols_a)?,
                b: Matrix::from_columns(&cols_b)?,
                a_shape: first.layers[k].a.shape(),
                b_shape: first.layers[k].b.shape(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StackedUpdates { layers })
}

/// Elementwise mean of the client deltas.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<Vec<LoraAdapter>> {
    stack_updates(updates)?.map_stacks(|m| Ok(m.column_mean()))
}

/// `beta * fedavg`.
pub fn aggregate_scaled(updates: &[ClientUpdate], beta: f64) -> Result<Vec<LoraAdapter>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(aggregate_fedavg(updates)?
        .into_iter()
        .map(|d| LoraAdapter {
            a: d.a.scale(beta),
            b: d.b.scale(beta),
        })
        .collect())
}

/// Dispatches on `spec`.
pub fn aggregate(spec: &AggregatorSpec, updates: &[ClientUpdate]) -> Result<Aggregate> {
    let plain = |deltas| Aggregate { deltas, trace: Vec::new() };
    match spec {
        AggregatorSpec::Fedavg {} => aggregate_fedavg(updates).map(plain),
        AggregatorSpec::Scaled { beta } => aggregate_scaled(updates, *beta).map(plain),
        AggregatorSpec::Ties { keep_fraction } => aggregate_ties(updates, *keep_fraction).map(plain),
        AggregatorSpec::Fedrpca { beta, rpca } => aggregate_fedrpca(updates, beta, rpca),
    }
}

#[cfg(test)]
mod tests;
