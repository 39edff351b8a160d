//! Synthetic constructions with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::federation::ClientUpdate;
use crate::linalg::Matrix;
use crate::model::LoraAdapter;

/// `M = L* + S*` with known parts.
#[derive(Clone, Debug)]
pub struct Planted {
    pub observed: Matrix,
    pub low_rank: Matrix,
    pub sparse: Matrix,
}

/// `L* = U V^T` with standard normal factors of width `rank`; each entry of
/// `S*` is nonzero with probability `density`, drawn uniformly from
/// `[-magnitude, magnitude)`.
pub fn planted_low_rank_plus_sparse(
    rows: usize,
    cols: usize,
    rank: usize,
    density: f64,
    magnitude: f64,
    seed: u64,
) -> Result<Planted> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Matrix::from_fn(rows, rank, |_, _| rng.sample(StandardNormal));
    let v = Matrix::from_fn(cols, rank, |_, _| rng.sample(StandardNormal));
    let low_rank = u.matmul(&v.transpose())?;
    let sparse = Matrix::from_fn(rows, cols, |_, _| {
        if rng.random_bool(density) {
            rng.random_range(-magnitude..magnitude)
        } else {
            0.0
        }
    });
    Ok(Planted {
        observed: low_rank.add(&sparse)?,
        low_rank,
        sparse,
    })
}

/// Two clients sharing a dense update `P` and each adding a private sparse
/// update (`C` and `D`, disjoint supports).
#[derive(Clone, Debug)]
pub struct SharedPlusPrivate {
    pub updates: Vec<ClientUpdate>,
    /// `P + C + D` per layer.
    pub ideal: Vec<LoraAdapter>,
}

/// One adapter layer with `dA: rank x d_in` and `dB: d_out x rank`.
///
/// `P` is a dense `+-1` pattern. `C` and `D` each cover `density` of the
/// entries with magnitudes in `[1, 2)` carrying the sign of `P` there. With
/// only two columns the robust-PCA optimum is unique only under this sign
/// alignment: an opposing sparse entry can be traded between `L` and `S`
/// at no l1 cost.
pub fn shared_plus_private(
    d_in: usize,
    d_out: usize,
    rank: usize,
    density: f64,
    seed: u64,
) -> Result<SharedPlusPrivate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut one = |rows: usize, cols: usize| -> Result<[Matrix; 3]> {
        let p = Matrix::from_fn(rows, cols, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let mut c = Matrix::zeros(rows, cols);
        let mut d = Matrix::zeros(rows, cols);
        let n = rows * cols;
        let k = ((density * n as f64).round() as usize).min(n / 2);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (slot, &i) in idx[..2 * k].iter().enumerate() {
            let mag: f64 = rng.random_range(1.0..2.0);
            let v = mag * p.as_slice()[i];
            let target = if slot < k { &mut c } else { &mut d };
            target.as_mut_slice()[i] = v;
        }
        let ideal = p.add(&c)?.add(&d)?;
        Ok([p.add(&c)?, p.add(&d)?, ideal])
    };
    let [a1, a2, a_ideal] = one(rank, d_in)?;
    let [b1, b2, b_ideal] = one(d_out, rank)?;
    Ok(SharedPlusPrivate {
        updates: vec![
            ClientUpdate {
                client_id: 0,
                layers: vec![LoraAdapter { a: a1, b: b1 }],
            },
            ClientUpdate {
                client_id: 1,
                layers: vec![LoraAdapter { a: a2, b: b2 }],
            },
        ],
        ideal: vec![LoraAdapter { a: a_ideal, b: b_ideal }],
    })
}
