//! A small multilayer perceptron with frozen dense layers and a trainable
//! LoRA adapter on every layer.
//!
//! Each layer computes `Z = (W0 + B A) X + b0`; hidden layers apply ReLU and
//! the last layer emits logits. Only `A` and `B` receive gradients during
//! fine-tuning. The LoRA scale `alpha / r` is fixed to 1.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{adamw_step, sgd_step, AdamW, AdamWHyper, Optimizer, OptimizerConfig, ParamSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Frozen pretrained layer `(W0, b0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `d_out x d_in`.
    pub weight: Matrix,
    /// `d_out x 1`.
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Low-rank factors with `delta W = B A`.
///
/// The same pair type carries adapter weights, their gradients, and client
/// deltas `(dA, dB)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `r x d_in`.
    pub a: Matrix,
    /// `d_out x r`.
    pub b: Matrix,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            a: Matrix::zeros(self.a.rows(), self.a.cols()),
            b: Matrix::zeros(self.b.rows(), self.b.cols()),
        }
    }

    pub fn delta_weight(&self) -> Result<Matrix> {
        self.b.matmul(&self.a)
    }
}

/// Per-layer `(dA, dB)`, mirroring the adapter list.
pub type GradientSet = Vec<LoraAdapter>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden widths; empty means multinomial logistic regression.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_rank")]
    pub rank: usize,
}

fn default_rank() -> usize {
    4
}

impl ModelConfig {
    /// `(d_out, d_in)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("input_dim and num_classes must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden_dims entries must be positive".into()));
        }
        if self.rank == 0 {
            return Err(Error::Config("model.rank must be positive".into()));
        }
        let limit = self
            .layer_shapes()
            .iter()
            .map(|&(o, i)| o.min(i))
            .min()
            .unwrap_or(0);
        if self.rank > limit {
            return Err(Error::Config(format!(
                "model.rank = {} exceeds the smallest layer dimension {limit}",
                self.rank
            )));
        }
        Ok(())
    }
}

/// Random He-initialized layers for the given architecture.
pub fn init_layers(config: &ModelConfig, seed: u64) -> Result<Vec<DenseLayer>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(config
        .layer_shapes()
        .into_iter()
        .map(|(d_out, d_in)| {
            let normal = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("finite std");
            DenseLayer {
                weight: Matrix::from_fn(d_out, d_in, |_, _| normal.sample(&mut rng)),
                bias: Matrix::zeros(d_out, 1),
            }
        })
        .collect())
}

/// Fresh adapters: `B = 0`, `A ~ N(0, 1/r)`. The adapted model therefore
/// starts out identical to the base model.
pub fn init_adapters(config: &ModelConfig, seed: u64) -> Result<Vec<LoraAdapter>> {
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::InvalidArgument(msg),
        other => other,
    })?;
    let r = config.rank;
    let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(config
        .layer_shapes()
        .into_iter()
        .map(|(d_out, d_in)| LoraAdapter {
            a: Matrix::from_fn(r, d_in, |_, _| normal.sample(&mut rng)),
            b: Matrix::zeros(d_out, r),
        })
        .collect())
}

fn check_stack(layers: &[DenseLayer], adapters: Option<&[LoraAdapter]>) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::invalid("model has no layers"));
    }
    for w in layers.windows(2) {
        if w[1].d_in() != w[0].d_out() {
            return Err(Error::ShapeMismatch {
                op: "layer chain",
                lhs: w[0].weight.shape(),
                rhs: w[1].weight.shape(),
            });
        }
    }
    if let Some(adapters) = adapters {
        if adapters.len() != layers.len() {
            return Err(Error::invalid(format!(
                "{} adapters for {} layers",
                adapters.len(),
                layers.len()
            )));
        }
        for (l, ad) in layers.iter().zip(adapters) {
            if ad.a.cols() != l.d_in() || ad.b.rows() != l.d_out() || ad.a.rows() != ad.b.cols() {
                return Err(Error::ShapeMismatch {
                    op: "adapter",
                    lhs: l.weight.shape(),
                    rhs: (ad.b.rows(), ad.a.cols()),
                });
            }
        }
    }
    Ok(())
}

fn effective_weights(layers: &[DenseLayer], adapters: Option<&[LoraAdapter]>) -> Result<Vec<Matrix>> {
    layers
        .iter()
        .enumerate()
        .map(|(k, l)| match adapters {
            Some(ad) => l.weight.add(&ad[k].delta_weight()?),
            None => Ok(l.weight.clone()),
        })
        .collect()
}

fn affine(weight: &Matrix, bias: &Matrix, x: &Matrix) -> Result<Matrix> {
    let mut z = weight.matmul(x)?;
    let n = z.cols();
    for (i, row) in z.as_mut_slice().chunks_mut(n).enumerate() {
        let b = bias.as_slice()[i];
        row.iter_mut().for_each(|v| *v += b);
    }
    Ok(z)
}

/// Layer inputs and the logits, kept for the backward pass.
struct Trace {
    inputs: Vec<Matrix>,
    logits: Matrix,
}

fn forward_trace(layers: &[DenseLayer], weights: &[Matrix], x: &Matrix) -> Result<Trace> {
    if x.rows() != layers[0].d_in() {
        return Err(Error::ShapeMismatch {
            op: "forward input",
            lhs: layers[0].weight.shape(),
            rhs: x.shape(),
        });
    }
    let mut inputs = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (k, (layer, w)) in layers.iter().zip(weights).enumerate() {
        let z = affine(w, &layer.bias, &h)?;
        inputs.push(h);
        h = if k + 1 < layers.len() { z.map(|v| v.max(0.0)) } else { z };
    }
    Ok(Trace { inputs, logits: h })
}

/// Logits (`num_classes x batch`) of the adapted model for `x` (`d_in x batch`).
pub fn forward(layers: &[DenseLayer], adapters: &[LoraAdapter], x: &Matrix) -> Result<Matrix> {
    check_stack(layers, Some(adapters))?;
    let weights = effective_weights(layers, Some(adapters))?;
    Ok(forward_trace(layers, &weights, x)?.logits)
}

/// Logits of the base model alone.
pub fn forward_base(layers: &[DenseLayer], x: &Matrix) -> Result<Matrix> {
    check_stack(layers, None)?;
    let weights = effective_weights(layers, None)?;
    Ok(forward_trace(layers, &weights, x)?.logits)
}

/// Mean softmax cross-entropy and `dLoss/dLogits`.
fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (classes, n) = logits.shape();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Matrix::zeros(classes, n);
    let mut loss = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let max = (0..classes).map(|c| logits[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..classes).map(|c| (logits[(c, j)] - max).exp()).sum();
        let log_denom = denom.ln();
        loss += -(logits[(label, j)] - max - log_denom);
        for c in 0..classes {
            let p = (logits[(c, j)] - max).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[(c, j)] = (p - target) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Backpropagates `dLoss/dLogits`, returning `(upstream gradient, layer input)`
/// per layer in layer order.
fn backward(
    weights: &[Matrix],
    trace: Trace,
    mut grad: Matrix,
) -> Result<Vec<(Matrix, Matrix)>> {
    let n_layers = weights.len();
    let mut out: Vec<(Matrix, Matrix)> = Vec::with_capacity(n_layers);
    let mut inputs = trace.inputs;
    for k in (0..n_layers).rev() {
        let input = inputs.pop().expect("one input per layer");
        if k == 0 {
            out.push((grad, input));
            break;
        }
        let mut g = weights[k].transpose().matmul(&grad)?;
        // ReLU derivative: the layer input is the previous activation.
        for (gv, &hv) in g.as_mut_slice().iter_mut().zip(input.as_slice()) {
            if hv <= 0.0 {
                *gv = 0.0;
            }
        }
        out.push((std::mem::replace(&mut grad, g), input));
    }
    out.reverse();
    Ok(out)
}

/// Mean softmax cross-entropy of the adapted model and its gradient with
/// respect to every adapter's `A` and `B`.
///
/// With upstream gradient `G` and layer input `X`:
/// `dB = G (A X)^T`, `dA = B^T G X^T`.
pub fn loss_and_grad(
    layers: &[DenseLayer],
    adapters: &[LoraAdapter],
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    check_stack(layers, Some(adapters))?;
    let weights = effective_weights(layers, Some(adapters))?;
    let trace = forward_trace(layers, &weights, x)?;
    let (loss, g) = softmax_xent(&trace.logits, labels)?;
    let per_layer = backward(&weights, trace, g)?;
    let grads = per_layer
        .iter()
        .zip(adapters)
        .map(|((g, input), ad)| {
            let ax = ad.a.matmul(input)?;
            let db = g.matmul(&ax.transpose())?;
            let da = ad.b.transpose().matmul(g)?.matmul(&input.transpose())?;
            Ok(LoraAdapter { a: da, b: db })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Loss and full-weight gradients `(dW, db)` of the base model; used for
/// pretraining.
pub fn base_loss_and_grad(
    layers: &[DenseLayer],
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<DenseLayer>)> {
    check_stack(layers, None)?;
    let weights = effective_weights(layers, None)?;
    let trace = forward_trace(layers, &weights, x)?;
    let (loss, g) = softmax_xent(&trace.logits, labels)?;
    let grads = backward(&weights, trace, g)?
        .iter()
        .map(|(g, input)| {
            Ok(DenseLayer {
                weight: g.matmul(&input.transpose())?,
                bias: g.column_sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Mean loss and accuracy on a dataset.
pub fn evaluate(layers: &[DenseLayer], adapters: &[LoraAdapter], data: &Dataset) -> Result<(f64, f64)> {
    let logits = forward(layers, adapters, &data.features)?;
    score(&logits, &data.labels)
}

pub fn evaluate_base(layers: &[DenseLayer], data: &Dataset) -> Result<(f64, f64)> {
    let logits = forward_base(layers, &data.features)?;
    score(&logits, &data.labels)
}

fn score(logits: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
    let (loss, _) = softmax_xent(logits, labels)?;
    let classes = logits.rows();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(j, &label)| {
            let mut best = 0;
            for c in 1..classes {
                if logits[(c, j)] > logits[(best, j)] {
                    best = c;
                }
            }
            best == label
        })
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-2,
            weight_decay: 0.0,
        }
    }
}

/// Trains full weights from a random init with AdamW and returns the frozen
/// layers. Deterministic given `seed`.
pub fn pretrain(
    data: &Dataset,
    config: &ModelConfig,
    train: &PretrainConfig,
    seed: u64,
) -> Result<Vec<DenseLayer>> {
    if data.is_empty() {
        return Err(Error::invalid("pretraining dataset is empty"));
    }
    if data.input_dim() != config.input_dim {
        return Err(Error::invalid(format!(
            "dataset has {} features, model expects {}",
            data.input_dim(),
            config.input_dim
        )));
    }
    if train.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut layers = init_layers(config, seed)?;
    let mut opt = AdamW::new(AdamWHyper {
        lr: train.lr,
        weight_decay: train.weight_decay,
        ..AdamWHyper::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba5e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size) {
            let batch = data.select(chunk);
            let (_, grads) = base_loss_and_grad(&layers, &batch.features, &batch.labels)?;
            opt.step(&mut layers, &grads)?;
        }
    }
    Ok(layers)
}
