//! SGD and AdamW over lists of parameter matrices.

use serde::{Deserialize, Serialize};

use super::{DenseLayer, LoraAdapter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A collection of trainable matrices visited in a fixed order.
pub trait ParamSet {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;
}

impl ParamSet for [LoraAdapter] {
    fn params(&self) -> Vec<&Matrix> {
        self.iter().flat_map(|ad| [&ad.a, &ad.b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().flat_map(|ad| [&mut ad.a, &mut ad.b]).collect()
    }
}

impl ParamSet for Vec<LoraAdapter> {
    fn params(&self) -> Vec<&Matrix> {
        self.as_slice().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.as_mut_slice().params_mut()
    }
}

impl ParamSet for [DenseLayer] {
    fn params(&self) -> Vec<&Matrix> {
        self.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

impl ParamSet for Vec<DenseLayer> {
    fn params(&self) -> Vec<&Matrix> {
        self.as_slice().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.as_mut_slice().params_mut()
    }
}

fn check_pairing(params: &[&mut Matrix], grads: &[&Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step<P: ParamSet + ?Sized>(params: &mut P, grads: &P, lr: f64) -> Result<()> {
    let grads = grads.params();
    let mut params = params.params_mut();
    check_pairing(&params, &grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay:
///
/// ```text
/// m <- b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
/// theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWHyper,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamW {
    pub fn new(hyper: AdamWHyper) -> Self {
        Self {
            hyper,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.params();
        let mut params = params.params_mut();
        check_pairing(&params, &grads)?;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(Error::invalid("optimizer state does not match parameter list"));
        }
        self.t += 1;
        let AdamWHyper {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (((theta, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = if c1 > 0.0 { *mi / c1 } else { *mi };
                let v_hat = if c2 > 0.0 { *vi / c2 } else { *vi };
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
            }
        }
        Ok(())
    }
}

/// Functional form of one AdamW update.
pub fn adamw_step<P: ParamSet + Clone>(params: &P, grads: &P, mut state: AdamW) -> Result<(P, AdamW)> {
    let mut next = params.clone();
    state.step(&mut next, grads)?;
    Ok((next, state))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adamw {
        #[serde(default = "default_adam_lr")]
        lr: f64,
        #[serde(default = "default_wd")]
        weight_decay: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_adam_lr() -> f64 {
    AdamWHyper::default().lr
}
fn default_wd() -> f64 {
    AdamWHyper::default().weight_decay
}
fn default_beta1() -> f64 {
    AdamWHyper::default().beta1
}
fn default_beta2() -> f64 {
    AdamWHyper::default().beta2
}
fn default_eps() -> f64 {
    AdamWHyper::default().eps
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let h = AdamWHyper::default();
        OptimizerConfig::Adamw {
            lr: h.lr,
            weight_decay: h.weight_decay,
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adamw { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("optimizer lr must be nonnegative, got {lr}")));
        }
        if let OptimizerConfig::Adamw { beta1, beta2, eps, weight_decay, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::Config("adam betas must lie in [0, 1)".into()));
            }
            if !(eps > 0.0) || !(weight_decay >= 0.0) {
                return Err(Error::Config("adam eps must be positive and weight_decay nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Optimizer {
        match *self {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd { lr },
            OptimizerConfig::Adamw { lr, weight_decay, beta1, beta2, eps } => {
                Optimizer::AdamW(AdamW::new(AdamWHyper { lr, weight_decay, beta1, beta2, eps }))
            }
        }
    }
}

/// Stateful optimizer instance owned by one training loop.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW(AdamW),
}

impl Optimizer {
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
            Optimizer::AdamW(adam) => adam.step(params, grads),
        }
    }
}
