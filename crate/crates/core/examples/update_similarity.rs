//! Pairwise cosine similarity of client updates on the standard benchmark,
//! for the raw updates and for their robust-PCA low-rank and sparse parts.
//!
//! ```bash
//! cargo run --release -p fedlab --example update_similarity -- [round] [seed]
//! ```

use fedlab::aggregation::{AggregatorSpec, MatrixKind};
use fedlab::diagnostics::{decomposed_similarity, Selector};
use fedlab::experiment::{benchmark_config, prepare};
use fedlab::federation::{self, ClientUpdate};
use fedlab::rpca::RpcaConfig;

fn main() -> fedlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let round: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut cfg = benchmark_config();
    cfg.seed = Some(seed);
    cfg.federation.rounds = round + 1;
    let cfg = cfg.resolve()?;
    let prepared = prepare(&cfg)?;

    let mut captured: Vec<ClientUpdate> = Vec::new();
    federation::run(&cfg.federation, &AggregatorSpec::Fedavg {}, prepared.setup, |outcome| {
        if outcome.metrics.round == round as i64 {
            captured = outcome.updates.clone();
        }
        Ok(())
    })?;

    println!("round {round}, {} clients", captured.len());
    println!("{:<12} {:>8} {:>10} {:>8}", "selection", "raw", "low-rank", "sparse");
    let mut selections = vec![("all".to_string(), Selector::all())];
    for layer in 0..captured[0].layers.len() {
        for kind in [MatrixKind::A, MatrixKind::B] {
            let sel = Selector { layer: Some(layer), matrix: Some(kind) };
            selections.push((format!("layer{layer}.{kind}"), sel));
        }
    }
    for (label, sel) in selections {
        let d = decomposed_similarity(&captured, sel, &RpcaConfig::default())?;
        let (raw, low, sparse) = d.means()?;
        println!("{label:<12} {raw:>8.4} {low:>10.4} {sparse:>8.4}");
    }
    Ok(())
}
