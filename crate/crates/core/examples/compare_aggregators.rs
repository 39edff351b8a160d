//! Runs the standard synthetic benchmark once per aggregator and compares
//! final accuracy and rounds to a shared target.
//!
//! ```bash
//! cargo run --release -p fedlab --example compare_aggregators -- [seed] [out_dir]
//! ```

use std::path::PathBuf;

use fedlab::aggregation::{AggregatorSpec, BetaMode};
use fedlab::diagnostics::rounds_to_target;
use fedlab::experiment::{benchmark_config, run_experiment};
use fedlab::federation::ClientMethod;
use fedlab::rpca::RpcaConfig;

fn main() -> fedlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fedlab-out/compare".into()));

    let runs: Vec<(&str, AggregatorSpec, ClientMethod)> = vec![
        ("fedavg", AggregatorSpec::Fedavg {}, ClientMethod::Plain {}),
        ("fedprox", AggregatorSpec::Fedavg {}, ClientMethod::Fedprox { mu: 0.01 }),
        ("scaffold", AggregatorSpec::Fedavg {}, ClientMethod::Scaffold {}),
        ("scaled", AggregatorSpec::Scaled { beta: 2.0 }, ClientMethod::Plain {}),
        ("ties", AggregatorSpec::Ties { keep_fraction: 0.1 }, ClientMethod::Plain {}),
        ("fedrpca", AggregatorSpec::default(), ClientMethod::Plain {}),
        (
            "fedrpca-b2",
            AggregatorSpec::Fedrpca { beta: BetaMode::Fixed { beta: 2.0 }, rpca: RpcaConfig::default() },
            ClientMethod::Plain {},
        ),
    ];

    let mut results = Vec::new();
    for (name, spec, method) in runs {
        let mut cfg = benchmark_config();
        cfg.seed = Some(seed);
        cfg.output_dir = out.join(name);
        cfg.aggregator = spec;
        cfg.federation.client_method = method;
        let start = std::time::Instant::now();
        let res = run_experiment(&cfg)?;
        println!(
            "{name:<11} initial {:.4} final {:.4} ({:.1?})",
            res.initial.test_accuracy,
            res.final_accuracy,
            start.elapsed()
        );
        results.push((name, res));
    }

    let fedavg_final = results[0].1.final_accuracy;
    let target = 0.9 * fedavg_final;
    println!("\nrounds to {target:.4} (90% of FedAvg's final accuracy)");
    for (name, res) in &results {
        let r = rounds_to_target(&res.rounds, target);
        println!("{name:<11} {}", r.map_or("not reached".to_string(), |r| r.to_string()));
    }
    Ok(())
}
