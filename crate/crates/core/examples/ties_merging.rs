//! Trim, elect sign and disjoint-mean merging on a two-client example, next
//! to plain averaging.
//!
//! ```bash
//! cargo run -p fedlab --example ties_merging
//! ```

use fedlab::aggregation::{aggregate_fedavg, aggregate_ties};
use fedlab::federation::ClientUpdate;
use fedlab::model::LoraAdapter;
use fedlab::Matrix;

fn client(id: usize, a: &[f64]) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        layers: vec![LoraAdapter {
            a: Matrix::from_vec(1, a.len(), a.to_vec()).expect("row vector"),
            b: Matrix::zeros(1, 1),
        }],
    }
}

fn main() -> fedlab::Result<()> {
    let updates = [
        client(0, &[2.0, -0.1, 0.4, 1.0, -0.2]),
        client(1, &[1.0, -3.0, -0.5, 0.1, 0.3]),
    ];
    for u in &updates {
        println!("client {}  {:?}", u.client_id, u.layers[0].a.as_slice());
    }
    println!("fedavg    {:?}", aggregate_fedavg(&updates)?[0].a.as_slice());
    for keep in [0.2, 0.6, 1.0] {
        println!("ties {keep:.1}  {:?}", aggregate_ties(&updates, keep)?[0].a.as_slice());
    }
    Ok(())
}
