use log::warn;
use rayon::prelude::*;

use super::{stack_updates, Aggregate, BetaMode, MatrixKind, MatrixTrace};
use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::linalg::Matrix;
use crate::model::LoraAdapter;
use crate::rpca::{robust_pca, RpcaConfig};

/// `||S 1|| / ||M 1||`: how much of the summed update the sparse part
/// carries. Returns `None` when `||M 1|| = 0`.
pub fn sparse_energy(stack: &Matrix, sparse: &Matrix) -> Result<Option<f64>> {
    if stack.shape() != sparse.shape() {
        return Err(Error::ShapeMismatch {
            op: "sparse_energy",
            lhs: stack.shape(),
            rhs: sparse.shape(),
        });
    }
    let denom = stack.column_sum().frobenius_norm();
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some(sparse.column_sum().frobenius_norm() / denom))
}

/// `clamp(1 / E, 1, beta_max)`; `E = 0` gives 1.
pub fn adaptive_beta(energy: f64, beta_max: f64) -> f64 {
    if !(energy > 0.0) || !energy.is_finite() {
        warn!("sparse energy {energy} is degenerate; falling back to beta = 1");
        return 1.0;
    }
    (1.0 / energy).clamp(1.0, beta_max.max(1.0))
}

struct Part {
    delta: Matrix,
    trace: MatrixTrace,
}

fn decompose_one(
    stack: &Matrix,
    shape: (usize, usize),
    layer: usize,
    kind: MatrixKind,
    mode: &BetaMode,
    cfg: &RpcaConfig,
) -> Result<Part> {
    let dec = robust_pca(stack, cfg).map_err(|e| {
        Error::Numeric(format!("robust PCA failed on layer {layer} matrix {kind}: {e}"))
    })?;
    if !dec.converged {
        warn!(
            "robust PCA on layer {layer} matrix {kind} stopped after {} iterations (residual {:.3e})",
            dec.iterations, dec.residual
        );
    }
    let energy = sparse_energy(stack, &dec.sparse)?;
    let beta = match *mode {
        BetaMode::Fixed { beta } => beta,
        BetaMode::Adaptive { beta_max } => match energy {
            Some(e) => adaptive_beta(e, beta_max),
            None => {
                warn!("layer {layer} matrix {kind}: summed update is zero; using beta = 1");
                1.0
            }
        },
    };
    let mut combined = dec.low_rank.column_mean();
    combined.axpy(beta, &dec.sparse.column_mean())?;
    Ok(Part {
        delta: combined.reshape(shape.0, shape.1)?,
        trace: MatrixTrace {
            layer,
            matrix: kind,
            energy,
            beta,
            rpca_iterations: dec.iterations,
            rpca_residual: dec.residual,
            converged: dec.converged,
        },
    })
}

/// Robust-PCA decomposed aggregation.
///
/// For every layer and each of `A`, `B` independently: decompose the stack
/// `M = L + S`, then the global delta is `reshape(mean(L) + beta * mean(S))`.
/// The `(layer, matrix)` decompositions run in parallel and are combined in
/// layer order.
pub fn aggregate_fedrpca(
    updates: &[ClientUpdate],
    mode: &BetaMode,
    cfg: &RpcaConfig,
) -> Result<Aggregate> {
    let stacked = stack_updates(updates)?;
    let parts: Vec<Part> = stacked
        .pairs()
        .into_par_iter()
        .map(|(layer, kind)| {
            let (stack, shape) = stacked.layers[layer].stack(kind);
            decompose_one(stack, shape, layer, kind, mode, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut deltas = Vec::with_capacity(stacked.layers.len());
    let mut trace = Vec::with_capacity(parts.len());
    let mut it = parts.into_iter();
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        deltas.push(LoraAdapter { a: a.delta, b: b.delta });
        trace.push(a.trace);
        trace.push(b.trace);
    }
    Ok(Aggregate { deltas, trace })
}
