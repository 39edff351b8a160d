//! Measurement helpers: update similarity, rounds-to-target and the
//! per-round metrics stream.

mod dump;
mod metrics;

pub use dump::{read_update_dump, write_update_dump};
pub use metrics::{read_metrics, trace_path, write_metrics, MetricsWriter, METRICS_HEADER, TRACE_HEADER};

use log::warn;

use crate::aggregation::{stack_updates, MatrixKind, MatrixTrace};
use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::linalg::Matrix;
use crate::rpca::{robust_pca, RpcaConfig};

/// Evaluation of the global model after one round.
///
/// `round` is `-1` for the evaluation taken before any training.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: i64,
    pub aggregator: String,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub wall_seconds: f64,
    /// One entry per `(layer, matrix)`; empty unless the aggregator is fedrpca.
    pub rpca: Vec<MatrixTrace>,
}

/// Restricts similarity to one layer and/or one matrix kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Selector {
    pub layer: Option<usize>,
    pub matrix: Option<MatrixKind>,
}

impl Selector {
    pub fn all() -> Self {
        Self::default()
    }

    fn admits(&self, layer: usize, kind: MatrixKind) -> bool {
        self.layer.is_none_or(|l| l == layer) && self.matrix.is_none_or(|m| m == kind)
    }
}

/// Concatenates `vec(dA)` and `vec(dB)` of the selected layers, in layer order.
pub fn flatten_update(update: &ClientUpdate, selector: Selector) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, l) in update.layers.iter().enumerate() {
        if selector.admits(k, MatrixKind::A) {
            out.extend_from_slice(l.a.vec().as_slice());
        }
        if selector.admits(k, MatrixKind::B) {
            out.extend_from_slice(l.b.vec().as_slice());
        }
    }
    out
}

/// Pairwise cosine similarity of the columns of `vectors` (`n x M`).
///
/// A zero column has similarity 0 with every other column and 1 with itself.
pub fn cosine_similarity_columns(vectors: &Matrix) -> Matrix {
    let m = vectors.cols();
    let cols: Vec<Matrix> = (0..m).map(|j| vectors.col(j)).collect();
    let norms: Vec<f64> = cols.iter().map(Matrix::frobenius_norm).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        warn!("column {j} is zero; its similarities are set by convention");
    }
    Matrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            let dot: f64 = cols[i].as_slice().iter().zip(cols[j].as_slice()).map(|(a, b)| a * b).sum();
            (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    })
}

fn columns_of(vectors: Vec<Vec<f64>>) -> Result<Matrix> {
    let cols: Vec<Matrix> = vectors.into_iter().map(Matrix::column).collect();
    Matrix::from_columns(&cols)
}

/// `M x M` cosine similarity between flattened client updates.
pub fn cosine_similarity_matrix(updates: &[ClientUpdate]) -> Result<Matrix> {
    cosine_similarity_selected(updates, Selector::all())
}

pub fn cosine_similarity_selected(updates: &[ClientUpdate], selector: Selector) -> Result<Matrix> {
    if updates.is_empty() {
        return Err(Error::invalid("similarity needs at least one update"));
    }
    let flat: Vec<Vec<f64>> = updates.iter().map(|u| flatten_update(u, selector)).collect();
    if flat[0].is_empty() {
        return Err(Error::invalid("selector matches no adapter matrix"));
    }
    Ok(cosine_similarity_columns(&columns_of(flat)?))
}

/// Mean of the off-diagonal entries; 0 for a `1 x 1` input.
pub fn mean_offdiagonal(c: &Matrix) -> Result<f64> {
    let (r, k) = c.shape();
    if r != k {
        return Err(Error::invalid(format!("expected a square matrix, got {r}x{k}")));
    }
    if r == 1 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                sum += c[(i, j)];
            }
        }
    }
    Ok(sum / (r * (r - 1)) as f64)
}

/// Round of the first record with `test_accuracy >= target`.
pub fn rounds_to_target(series: &[RoundMetrics], target: f64) -> Option<i64> {
    series.iter().find(|m| m.test_accuracy >= target).map(|m| m.round)
}

/// Similarity of raw client updates next to that of their robust-PCA
/// low-rank and sparse parts.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedSimilarity {
    pub raw: Matrix,
    pub low_rank: Matrix,
    pub sparse: Matrix,
}

impl DecomposedSimilarity {
    /// `(raw, low_rank, sparse)` mean off-diagonal similarity.
    pub fn means(&self) -> Result<(f64, f64, f64)> {
        Ok((
            mean_offdiagonal(&self.raw)?,
            mean_offdiagonal(&self.low_rank)?,
            mean_offdiagonal(&self.sparse)?,
        ))
    }
}

/// Decomposes each selected `(layer, matrix)` stack separately and compares
/// clients on the concatenation of their columns of `M`, `L` and `S`.
pub fn decomposed_similarity(
    updates: &[ClientUpdate],
    selector: Selector,
    rpca: &RpcaConfig,
) -> Result<DecomposedSimilarity> {
    let stacked = stack_updates(updates)?;
    let m = stacked.num_clients();
    let mut raw = vec![Vec::new(); m];
    let mut low = vec![Vec::new(); m];
    let mut sparse = vec![Vec::new(); m];
    for (layer, kind) in stacked.pairs() {
        if !selector.admits(layer, kind) {
            continue;
        }
        let (stack, _) = stacked.layers[layer].stack(kind);
        let dec = robust_pca(stack, rpca)?;
        for j in 0..m {
            raw[j].extend_from_slice(stack.col(j).as_slice());
            low[j].extend_from_slice(dec.low_rank.col(j).as_slice());
            sparse[j].extend_from_slice(dec.sparse.col(j).as_slice());
        }
    }
    if raw.first().is_none_or(Vec::is_empty) {
        return Err(Error::invalid("selector matches no adapter matrix"));
    }
    Ok(DecomposedSimilarity {
        raw: cosine_similarity_columns(&columns_of(raw)?),
        low_rank: cosine_similarity_columns(&columns_of(low)?),
        sparse: cosine_similarity_columns(&columns_of(sparse)?),
    })
}
