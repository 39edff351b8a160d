//! Labelled datasets, the synthetic benchmark generator and the dataset file
//! format.
//!
//! In memory, features are stored one example per column (`d_in x n`), which
//! is the layout the model consumes. On disk the features file is a matrix
//! text file with one example per *row* (`n x d_in`), and the labels file
//! holds one integer per line.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{read_matrix, write_matrix, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `d_in x n`, one example per column.
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.cols() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature columns but {} labels",
                features.cols(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.rows()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Gathers the examples at `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.features.rows();
        let n = self.features.cols();
        let src = self.features.as_slice();
        let features = Matrix::from_fn(d, idx.len(), |i, j| src[i * n + idx[j]]);
        let labels = idx.iter().map(|&k| self.labels[k]).collect();
        Dataset { features, labels }
    }

    /// Deterministic shuffled split into `(train, test)` with
    /// `round(test_fraction * n)` test examples.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.select(train), self.select(test)))
    }

    /// Reads a features file (`n x d_in`) and a labels file.
    pub fn load(features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Self> {
        let features = read_matrix(features_path)?.transpose();
        let labels_path = labels_path.as_ref();
        let text = std::fs::read_to_string(labels_path).map_err(|e| Error::io(labels_path, e))?;
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            labels.push(line.parse::<usize>().map_err(|_| Error::Parse {
                path: labels_path.to_path_buf(),
                line: i + 1,
                message: format!("invalid label `{line}`"),
            })?);
        }
        Dataset::new(features, labels)
    }

    pub fn save(&self, features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
        write_matrix(features_path, &self.features.transpose())?;
        let labels_path = labels_path.as_ref();
        let mut text = String::with_capacity(self.len() * 2);
        for l in &self.labels {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        std::fs::write(labels_path, text).map_err(|e| Error::io(labels_path, e))
    }
}

/// Gaussian class-cluster task with a label-conditional domain shift.
///
/// Each class `c` has a mean `m_c`. The source domain draws
/// `x = m_c + noise`; the target domain draws `x = m_c + s_c + noise` where
/// `s_c` is a per-class shift. A model pretrained on the source is a
/// reasonable but imperfect starting point for the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Standard deviation of the class-mean entries.
    pub mean_scale: f64,
    /// Standard deviation of the target-domain shift entries.
    pub shift_scale: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Seed for the class means and shifts (the task identity).
    pub task_seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            num_classes: 8,
            input_dim: 16,
            mean_scale: 1.0,
            shift_scale: 3.0,
            noise: 1.0,
            task_seed: 2024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.input_dim == 0 {
            return Err(Error::invalid(
                "synthetic task needs at least 2 classes and a positive input dimension",
            ));
        }
        for (name, v) in [
            ("mean_scale", self.mean_scale),
            ("shift_scale", self.shift_scale),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    fn centers(&self) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.task_seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let means = Matrix::from_fn(self.num_classes, self.input_dim, |_, _| {
            self.mean_scale * std.sample(&mut rng)
        });
        let shifts = Matrix::from_fn(self.num_classes, self.input_dim, |_, _| {
            self.shift_scale * std.sample(&mut rng)
        });
        (means, shifts)
    }

    /// Draws `n` examples with balanced labels (`i % num_classes`, shuffled).
    pub fn sample(&self, domain: Domain, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("cannot sample an empty dataset"));
        }
        let (means, shifts) = self.centers();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        labels.shuffle(&mut rng);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let d = self.input_dim;
        let mut cols = vec![0.0; d * n];
        for (j, &c) in labels.iter().enumerate() {
            for i in 0..d {
                let mut v = means[(c, i)] + self.noise * std.sample(&mut rng);
                if domain == Domain::Target {
                    v += shifts[(c, i)];
                }
                cols[i * n + j] = v;
            }
        }
        Dataset::new(Matrix::from_vec(d, n, cols)?, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_and_split() {
        let ds = Dataset::new(
            Matrix::from_rows(&[&[0.0, 1.0, 2.0, 3.0], &[10.0, 11.0, 12.0, 13.0]]),
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let sub = ds.select(&[3, 0]);
        assert_eq!(sub.features, Matrix::from_rows(&[&[3.0, 0.0], &[13.0, 10.0]]));
        assert_eq!(sub.labels, vec![1, 0]);

        let (train, test) = ds.split(0.25, 1).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));
        let mut all: Vec<f64> = train.features.as_slice()[..3].to_vec();
        all.extend_from_slice(&test.features.as_slice()[..1]);
        all.sort_by(f64::total_cmp);
        assert_eq!(all, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(ds.split(1.0, 0).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let task = SyntheticTask::default();
        let a = task.sample(Domain::Target, 80, 3).unwrap();
        let b = task.sample(Domain::Target, 80, 3).unwrap();
        assert_eq!(a, b);
        for c in 0..8 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let src = task.sample(Domain::Source, 80, 3).unwrap();
        assert_eq!(src.labels, a.labels);
        assert_ne!(src.features, a.features);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = SyntheticTask::default().sample(Domain::Source, 12, 0).unwrap();
        let (f, l) = (dir.path().join("x.txt"), dir.path().join("y.txt"));
        ds.save(&f, &l).unwrap();
        assert_eq!(Dataset::load(&f, &l).unwrap(), ds);
        std::fs::write(&l, "0\n1\nx\n").unwrap();
        assert!(matches!(Dataset::load(&f, &l), Err(Error::Parse { line: 3, .. })));
    }
}
