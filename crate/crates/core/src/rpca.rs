//! Principal component pursuit via ADMM.
//!
//! Splits `M` into a low-rank `L` and a sparse `S` by solving
//! `min ||L||_* + lambda ||S||_1  s.t.  L + S = M` with the classic
//! alternating scheme: singular value thresholding for `L`, elementwise
//! shrinkage for `S`, then dual ascent on `Y`. With `rho = 1/mu`:
//!
//! ```text
//! L <- svt(M - S + rho Y, rho)
//! S <- shrink(M - L + rho Y, rho lambda)
//! Y <- Y + mu (M - L - S)
//! ```
//!
//! The loop stops once `||M - L - S||_F <= tol ||M||_F` or after `max_iter`
//! sweeps. Running out of iterations is reported through
//! [`RpcaDecomposition::converged`], not as an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{soft_threshold, svt, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpcaConfig {
    /// ADMM penalty. Filled from [`default_mu`] when absent.
    pub mu: Option<f64>,
    /// Sparsity weight. Filled from [`default_lambda`] when absent.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self {
            mu: None,
            lambda: None,
            tol: 1e-7,
            max_iter: 1000,
        }
    }
}

impl RpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::invalid(format!("rpca tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("rpca max_iter must be at least 1"));
        }
        for (name, v) in [("mu", self.mu), ("lambda", self.lambda)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::invalid(format!("rpca {name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpcaDecomposition {
    pub low_rank: Matrix,
    pub sparse: Matrix,
    pub iterations: usize,
    /// Final `||M - L - S||_F`.
    pub residual: f64,
    pub converged: bool,
}

/// `1 / sqrt(max(rows, cols))`.
pub fn default_lambda(rows: usize, cols: usize) -> f64 {
    1.0 / (rows.max(cols) as f64).sqrt()
}

/// `rows * cols / (4 ||M||_1)`. Fails on an all-zero matrix.
pub fn default_mu(m: &Matrix) -> Result<f64> {
    let l1 = m.l1_norm();
    if l1 == 0.0 {
        return Err(Error::Numeric(
            "default mu divides by ||M||_1, which is zero".into(),
        ));
    }
    Ok((m.rows() * m.cols()) as f64 / (4.0 * l1))
}

pub fn robust_pca(m: &Matrix, cfg: &RpcaConfig) -> Result<RpcaDecomposition> {
    cfg.validate()?;
    if !m.is_finite() {
        return Err(Error::Numeric("robust_pca input contains non-finite entries".into()));
    }
    let (rows, cols) = m.shape();
    if m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(RpcaDecomposition {
            low_rank: Matrix::zeros(rows, cols),
            sparse: Matrix::zeros(rows, cols),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let mu = match cfg.mu {
        Some(mu) => mu,
        None => default_mu(m)?,
    };
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(rows, cols));
    let rho = 1.0 / mu;
    let threshold = cfg.tol * m.frobenius_norm();

    let mut low_rank = Matrix::zeros(rows, cols);
    let mut sparse = Matrix::zeros(rows, cols);
    let mut dual = Matrix::zeros(rows, cols);
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        // L <- svt(M - S + rho Y, rho)
        let mut arg = m.sub(&sparse)?;
        arg.axpy(rho, &dual)?;
        low_rank = svt(&arg, rho)?;

        // S <- shrink(M - L + rho Y, rho lambda)
        let mut arg = m.sub(&low_rank)?;
        arg.axpy(rho, &dual)?;
        sparse = soft_threshold(&arg, rho * lambda)?;

        // Y <- Y + mu (M - L - S)
        let gap = m.sub(&low_rank)?.sub(&sparse)?;
        dual.axpy(mu, &gap)?;

        residual = gap.frobenius_norm();
        if !residual.is_finite() || !dual.is_finite() {
            return Err(Error::Numeric(format!(
                "robust_pca produced non-finite iterates at iteration {iter}"
            )));
        }
        if residual <= threshold {
            return Ok(RpcaDecomposition {
                low_rank,
                sparse,
                iterations: iter,
                residual,
                converged: true,
            });
        }
    }

    Ok(RpcaDecomposition {
        low_rank,
        sparse,
        iterations: cfg.max_iter,
        residual,
        converged: false,
    })
}
