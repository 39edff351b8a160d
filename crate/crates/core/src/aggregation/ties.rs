use super::stack_updates;
use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::linalg::Matrix;
use crate::model::LoraAdapter;

/// Number of entries kept out of `len`; at least one.
fn kept(len: usize, keep_fraction: f64) -> usize {
    // guard against 0.7 * 10 = 7.000000000000001 style round-up
    let k = (keep_fraction * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len)
}

/// Keeps the `k` largest-magnitude entries of one column (lower index wins
/// ties) and zeroes the rest.
fn trim_column(values: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()).then(i.cmp(&j)));
    let mut out = vec![0.0; values.len()];
    for &i in &order[..k] {
        out[i] = values[i];
    }
    out
}

fn ties_stack(stack: &Matrix, keep_fraction: f64) -> Matrix {
    let (n, m) = stack.shape();
    let k = kept(n, keep_fraction);
    let trimmed: Vec<Vec<f64>> = (0..m)
        .map(|j| trim_column(stack.col(j).as_slice(), k))
        .collect();
    let merged = (0..n)
        .map(|i| {
            let total: f64 = trimmed.iter().map(|c| c[i]).sum();
            let positive = total >= 0.0;
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in &trimmed {
                let v = c[i];
                if v != 0.0 && (v > 0.0) == positive {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    Matrix::column(merged)
}

/// TIES merging on each stack: trim each client column to its
/// `ceil(keep_fraction * len)` largest-magnitude entries, elect a sign per
/// coordinate from the summed trimmed values (zero elects `+`), then average
/// only the nonzero values that agree with the elected sign.
pub fn aggregate_ties(updates: &[ClientUpdate], keep_fraction: f64) -> Result<Vec<LoraAdapter>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    stack_updates(updates)?.map_stacks(|m| Ok(ties_stack(m, keep_fraction)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kept_counts() {
        assert_eq!(kept(10, 0.7), 7);
        assert_eq!(kept(10, 0.1), 1);
        assert_eq!(kept(2, 0.5), 1);
        assert_eq!(kept(3, 0.01), 1);
        assert_eq!(kept(3, 1.0), 3);
    }

    #[test]
    fn trim_breaks_ties_by_index() {
        assert_eq!(trim_column(&[1.0, -1.0, 0.5], 1), vec![1.0, 0.0, 0.0]);
        assert_eq!(trim_column(&[0.5, -1.0, 1.0], 1), vec![0.0, -1.0, 0.0]);
    }
}
