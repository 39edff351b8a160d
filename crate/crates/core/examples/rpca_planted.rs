//! Recovers a planted low-rank + sparse decomposition with the default
//! ADMM hyperparameters.
//!
//! ```bash
//! cargo run -p fedlab --example rpca_planted -- [seed]
//! ```

use fedlab::fixtures::planted_low_rank_plus_sparse;
use fedlab::rpca::{robust_pca, RpcaConfig};
use fedlab::Matrix;

fn main() -> fedlab::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0u64);
    let planted = planted_low_rank_plus_sparse(200, 100, 5, 0.05, 10.0, seed)?;

    let start = std::time::Instant::now();
    let out = robust_pca(&planted.observed, &RpcaConfig::default())?;
    let elapsed = start.elapsed();

    let rel = |a: &Matrix, b: &Matrix| a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm();
    println!("seed            {seed}");
    println!("iterations      {}", out.iterations);
    println!("converged       {}", out.converged);
    println!("residual        {:.3e}", out.residual);
    println!("low-rank error  {:.3e}", rel(&out.low_rank, &planted.low_rank));
    println!("sparse error    {:.3e}", rel(&out.sparse, &planted.sparse));
    println!("elapsed         {elapsed:?}");
    Ok(())
}
