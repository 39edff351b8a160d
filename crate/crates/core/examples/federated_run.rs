//! Drives the federation loop directly with a per-round callback, printing
//! accuracy and the FedRPCA sparse-energy ratios as rounds finish.
//!
//! ```bash
//! cargo run -p fedlab --release --example federated_run -- [rounds] [seed]
//! ```

use fedlab::experiment::{benchmark_config, prepare};
use fedlab::federation;

fn main() -> fedlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let rounds = args.next().and_then(|s| s.parse().ok()).unwrap_or(20usize);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0u64);

    let mut cfg = benchmark_config();
    cfg.seed = Some(seed);
    cfg.federation.rounds = rounds;
    let cfg = cfg.resolve()?;
    let prepared = prepare(&cfg)?;
    let initial = federation::initial_metrics(&prepared.setup, &cfg.aggregator)?;
    println!("round  -1  accuracy {:.4}", initial.test_accuracy);

    federation::run(&cfg.federation, &cfg.aggregator, prepared.setup, |outcome| {
        let m = &outcome.metrics;
        let energies: Vec<f64> = m.rpca.iter().filter_map(|t| t.energy).collect();
        let energy = energies.iter().sum::<f64>() / energies.len().max(1) as f64;
        let beta = m.rpca.iter().map(|t| t.beta).sum::<f64>() / m.rpca.len().max(1) as f64;
        println!(
            "round {:>3}  accuracy {:.4}  loss {:.4}  mean E {energy:.3}  mean beta {beta:.2}",
            m.round, m.test_accuracy, m.test_loss
        );
        Ok(())
    })?;
    Ok(())
}
