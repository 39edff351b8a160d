//! Label-skewed client shards drawn from a symmetric Dirichlet prior.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Example indices held by each client, ascending within a client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub clients: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn materialize(&self, data: &Dataset) -> Vec<Dataset> {
        self.clients.iter().map(|idx| data.select(idx)).collect()
    }

    /// Class histogram per client.
    pub fn histograms(&self, labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|idx| {
                let mut h = vec![0; num_classes];
                for &i in idx {
                    h[labels[i]] += 1;
                }
                h
            })
            .collect()
    }

    /// Writes `client_id: i0 i1 ...`, one client per line.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (id, idx) in self.clients.iter().enumerate() {
            let list: Vec<String> = idx.iter().map(usize::to_string).collect();
            text.push_str(&format!("{id}: {}\n", list.join(" ")));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Draws `p ~ Dirichlet(alpha * 1)` of length `m` via normalized gammas.
fn dirichlet(alpha: f64, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma underflowed; fall back to a uniform split
        vec![1.0 / m as f64; m]
    }
}

/// Splits each class across `num_clients` by Dirichlet proportions.
///
/// For every class, its examples are shuffled and cut at the rounded
/// cumulative proportions. Clients left empty then receive one example from
/// the currently largest client (lowest id on ties) until none is empty.
pub fn dirichlet_partition_indices(
    labels: &[usize],
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients must be at least 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    if labels.len() < num_clients {
        return Err(Error::invalid(format!(
            "{} examples cannot cover {num_clients} clients",
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let props = dirichlet(alpha, num_clients, &mut rng);
        let n = idx.len() as f64;
        let mut cum = 0.0;
        let mut start = 0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == num_clients {
                idx.len()
            } else {
                ((cum * n).round() as usize).clamp(start, idx.len())
            };
            clients[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..num_clients)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = clients[donor].pop().expect("donor is the largest client");
        clients[empty].push(moved);
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(Partition { clients })
}

pub fn dirichlet_partition(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot partition an empty dataset"));
    }
    Ok(dirichlet_partition_indices(&data.labels, num_clients, alpha, seed)?.materialize(data))
}

/// Shannon entropy (nats) of a class histogram.
pub fn histogram_entropy(hist: &[usize]) -> f64 {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|i| i % classes).collect()
    }

    #[test]
    fn large_alpha_is_near_uniform() {
        let labels = balanced(4000, 2);
        for seed in 0..10 {
            let p = dirichlet_partition_indices(&labels, 4, 1000.0, seed).unwrap();
            for h in p.histograms(&labels, 2) {
                let share = h[1] as f64 / (h[0] + h[1]) as f64;
                assert!((0.40..=0.60).contains(&share), "seed {seed}: share {share}");
            }
        }
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = balanced(37, 3);
        let p = dirichlet_partition_indices(&labels, 1, 0.3, 0).unwrap();
        assert_eq!(p.clients[0], (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn lower_alpha_is_more_skewed() {
        let labels = balanced(5000, 10);
        let mean_entropy = |alpha: f64| {
            let mut total = 0.0;
            for seed in 0..5 {
                let p = dirichlet_partition_indices(&labels, 50, alpha, seed).unwrap();
                let hs = p.histograms(&labels, 10);
                total += hs.iter().map(|h| histogram_entropy(h)).sum::<f64>() / hs.len() as f64;
            }
            total / 5.0
        };
        assert!(mean_entropy(0.1) < mean_entropy(10.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let labels = balanced(3, 2);
        assert!(dirichlet_partition_indices(&labels, 4, 1.0, 0).is_err());
        assert!(dirichlet_partition_indices(&labels, 2, 0.0, 0).is_err());
        assert!(dirichlet_partition_indices(&labels, 0, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn exhaustive_disjoint_nonempty(
            n in 10usize..300,
            classes in 1usize..6,
            m in 1usize..10,
            alpha in 0.05f64..5.0,
            seed in any::<u64>(),
        ) {
            let labels = balanced(n, classes);
            let p = dirichlet_partition_indices(&labels, m, alpha, seed).unwrap();
            prop_assert_eq!(p.num_clients(), m);
            prop_assert!(p.clients.iter().all(|c| !c.is_empty()));
            let mut all: Vec<usize> = p.clients.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
