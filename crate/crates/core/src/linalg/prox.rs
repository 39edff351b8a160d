//! Proximal operators used by the ADMM loop.

use nalgebra::linalg::SVD;

use super::Matrix;
use crate::error::{Error, Result};

const SVD_MAX_SWEEPS: usize = 10_000;

fn check_threshold(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "threshold must be a finite nonnegative number, got {t}"
        )));
    }
    Ok(())
}

#[inline]
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    let m = x.abs() - t;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Elementwise shrinkage `sign(x) * max(|x| - t, 0)`, the prox of `t*||.||_1`.
pub fn soft_threshold(x: &Matrix, t: f64) -> Result<Matrix> {
    check_threshold(t)?;
    Ok(x.map(|v| soft_threshold_scalar(v, t)))
}

fn thin_svd(x: &Matrix) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(x.to_nalgebra(), true, true, f64::EPSILON, SVD_MAX_SWEEPS).ok_or_else(|| {
        Error::Numeric(format!(
            "SVD of a {}x{} matrix did not converge",
            x.rows(),
            x.cols()
        ))
    })
}

/// Singular values in descending order.
pub fn singular_values(x: &Matrix) -> Result<Vec<f64>> {
    let svd = thin_svd(x)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Singular value thresholding: `U diag(shrink(s, t)) V^T` over the thin SVD
/// `X = U diag(s) V^T`. This is the prox of `t*||.||_*`.
pub fn svt(x: &Matrix, t: f64) -> Result<Matrix> {
    check_threshold(t)?;
    let (rows, cols) = x.shape();
    if x.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(rows, cols));
    }
    let svd = thin_svd(x)?;
    let u = svd.u.as_ref().expect("U requested");
    let vt = svd.v_t.as_ref().expect("V^T requested");
    let mut out = vec![0.0; rows * cols];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = soft_threshold_scalar(s, t);
        if shrunk == 0.0 {
            continue;
        }
        for i in 0..rows {
            let ui = u[(i, k)] * shrunk;
            if ui == 0.0 {
                continue;
            }
            let row = &mut out[i * cols..(i + 1) * cols];
            for (j, o) in row.iter_mut().enumerate() {
                *o += ui * vt[(k, j)];
            }
        }
    }
    Ok(Matrix::from_raw(rows, cols, out))
}
