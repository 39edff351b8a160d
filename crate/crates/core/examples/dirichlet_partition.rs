//! Shows how the Dirichlet concentration controls label skew across clients.
//!
//! ```bash
//! cargo run -p fedlab --example dirichlet_partition -- [clients] [seed]
//! ```

use fedlab::data::{Domain, SyntheticTask};
use fedlab::federation::{dirichlet_partition_indices, histogram_entropy};

fn main() -> fedlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let clients = args.next().and_then(|s| s.parse().ok()).unwrap_or(8usize);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let task = SyntheticTask::default();
    let data = task.sample(Domain::Target, 4000, seed)?;
    let uniform = (task.num_classes as f64).ln();

    for alpha in [0.05, 0.1, 0.3, 1.0, 10.0] {
        let part = dirichlet_partition_indices(&data.labels, clients, alpha, seed)?;
        let hists = part.histograms(&data.labels, task.num_classes);
        let mean_entropy = hists.iter().map(|h| histogram_entropy(h)).sum::<f64>() / clients as f64;
        println!("alpha {alpha:<5} mean label entropy {mean_entropy:.3} (uniform {uniform:.3})");
        for (c, h) in hists.iter().enumerate().take(4) {
            let row: Vec<String> = h.iter().map(|n| format!("{n:4}")).collect();
            println!("  client {c}: {}", row.join(" "));
        }
    }
    Ok(())
}
