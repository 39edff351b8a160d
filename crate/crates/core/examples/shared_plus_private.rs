//! Two clients share a dense update and each adds a private sparse one.
//! Averaging halves the private parts; FedRPCA with beta = 2 restores them.
//!
//! ```bash
//! cargo run -p fedlab --example shared_plus_private -- [seed]
//! ```

use fedlab::aggregation::{aggregate_fedavg, aggregate_fedrpca, BetaMode};
use fedlab::fixtures::shared_plus_private;
use fedlab::model::LoraAdapter;
use fedlab::rpca::RpcaConfig;

fn error(got: &LoraAdapter, want: &LoraAdapter) -> fedlab::Result<f64> {
    let num = got.a.sub(&want.a)?.frobenius_norm().hypot(got.b.sub(&want.b)?.frobenius_norm());
    Ok(num / want.a.frobenius_norm().hypot(want.b.frobenius_norm()))
}

fn main() -> fedlab::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let toy = shared_plus_private(64, 64, 8, 0.05, seed)?;
    let ideal = &toy.ideal[0];

    println!("fedavg           relative error {:.4}", error(&aggregate_fedavg(&toy.updates)?[0], ideal)?);
    let modes = [
        ("beta 1", BetaMode::Fixed { beta: 1.0 }),
        ("beta 2", BetaMode::Fixed { beta: 2.0 }),
        ("adaptive", BetaMode::default()),
    ];
    for (label, beta) in modes {
        let out = aggregate_fedrpca(&toy.updates, &beta, &RpcaConfig::default())?;
        let betas: Vec<String> = out.trace.iter().map(|t| format!("{}={:.2}", t.matrix, t.beta)).collect();
        println!(
            "fedrpca {label:<8} relative error {:.4}  ({})",
            error(&out.deltas[0], ideal)?,
            betas.join(", ")
        );
    }
    Ok(())
}
