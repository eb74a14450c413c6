use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Regression,
    Classification { classes: usize },
    BinaryMargin,
}

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    kind: TaskKind,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize, kind: TaskKind) -> Result<Self> {
        let n = labels.len();
        if n == 0 || dim == 0 {
            return Err(SimError::InvalidDataset(format!(
                "need at least one sample and one feature, got n={n}, d={dim}"
            )));
        }
        if features.len() != n * dim {
            return Err(SimError::InvalidDataset(format!(
                "{} feature values cannot form {n} rows of width {dim}",
                features.len()
            )));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidDataset("non-finite value".into()));
        }
        match kind {
            TaskKind::Classification { classes } => {
                if let Some(bad) = labels
                    .iter()
                    .find(|&&y| y < 0.0 || y.fract() != 0.0 || y >= classes as f64)
                {
                    return Err(SimError::InvalidDataset(format!(
                        "class label {bad} not an integer in [0, {classes})"
                    )));
                }
            }
            TaskKind::BinaryMargin => {
                if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
                    return Err(SimError::InvalidDataset(format!(
                        "margin label {bad} is not -1 or +1"
                    )));
                }
            }
            TaskKind::Regression => {}
        }
        Ok(Self {
            features,
            labels,
            dim,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.dim, self.kind)
    }

    /// Seeded shuffle split into `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(SimError::InvalidArgument(format!(
                "test fraction {test_fraction} not in [0, 1)"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream_rng(seed, Stream::Data, &[0x5711]));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, self.len().saturating_sub(1).max(1));
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train)?, self.subset(test)?))
    }

    /// Rescales every feature column to [0, 1]; constant columns map to 0.
    pub fn normalize_features(&mut self) {
        let d = self.dim;
        for j in 0..d {
            let (lo, hi) = self
                .features
                .iter()
                .skip(j)
                .step_by(d)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let span = hi - lo;
            for v in self.features.iter_mut().skip(j).step_by(d) {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }

    /// Shifts regression targets so the smallest one equals 1 when any
    /// target is non-positive. The regression accuracy divides by
    /// `max(y, y_hat)` and needs positive targets.
    pub fn shift_targets_positive(&mut self) {
        if self.kind != TaskKind::Regression {
            return;
        }
        let min = self.labels.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            let shift = 1.0 - min;
            self.labels.iter_mut().for_each(|y| *y += shift);
        }
    }

    /// Loads a CSV with a header row, one column named `label`, and numeric
    /// feature columns. Features are min-max normalised; regression targets
    /// are shifted into the positive range.
    pub fn from_csv(path: &Path, kind: TaskKind) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let label_col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or_else(|| {
                SimError::InvalidDataset(format!("{}: no column named \"label\"", path.display()))
            })?;
        let dim = headers.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    SimError::InvalidDataset(format!(
                        "{}: row {} column {}: {field:?} is not a number",
                        path.display(),
                        line + 2,
                        j + 1
                    ))
                })?;
                if j == label_col {
                    labels.push(v);
                } else {
                    features.push(v);
                }
            }
        }
        let kind = match kind {
            TaskKind::Classification { .. } => TaskKind::Classification {
                classes: labels.iter().cloned().fold(0.0_f64, f64::max) as usize + 1,
            },
            other => other,
        };
        let mut ds = Self::new(features, labels, dim, kind)?;
        ds.normalize_features();
        ds.shift_targets_positive();
        Ok(ds)
    }

    /// Linear targets with Gaussian noise on uniform features, Boston-like
    /// scale (targets roughly 5 to 50).
    pub fn synthetic_regression(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Data, &[1]);
        let coef: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..6.0)).collect();
        let noise = Normal::new(0.0, noise.max(0.0))
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let y = 5.0
                + row.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>()
                + noise.sample(&mut rng);
            features.extend(row);
            labels.push(y);
        }
        let mut ds = Self::new(features, labels, dim, TaskKind::Regression)?;
        ds.shift_targets_positive();
        Ok(ds)
    }

    /// Gaussian blobs around uniformly placed class centres.
    pub fn synthetic_classification(
        n: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(SimError::InvalidArgument(
                "need at least two classes".into(),
            ));
        }
        let mut rng = stream_rng(seed, Stream::Data, &[2]);
        let centres: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let jitter = Normal::new(0.0, spread.max(0.0))
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..classes);
            features.extend(centres[c].iter().map(|&x| x + jitter.sample(&mut rng)));
            labels.push(c as f64);
        }
        let mut ds = Self::new(features, labels, dim, TaskKind::Classification { classes })?;
        ds.normalize_features();
        Ok(ds)
    }

    /// Two classes separated by a random hyperplane through the unit cube's
    /// centre, with label noise controlled by `noise`.
    pub fn synthetic_margin(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Data, &[3]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let w: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let eps = Normal::new(0.0, noise.max(0.0))
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let score =
                row.iter().zip(&w).map(|(x, c)| (x - 0.5) * c).sum::<f64>() + eps.sample(&mut rng);
            features.extend(row);
            labels.push(if score >= 0.0 { 1.0 } else { -1.0 });
        }
        Self::new(features, labels, dim, TaskKind::BinaryMargin)
    }
}

/// One client's share of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub client_id: usize,
    pub sample_indices: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Splits `dataset` into `m` disjoint, non-empty partitions whose sizes
/// follow `N(mu, (std_factor * mu)^2)` with `mu = n / m`, rescaled to sum to
/// exactly `n`.
pub fn partition_dataset(
    dataset: &Dataset,
    m: usize,
    std_factor: f64,
    seed: u64,
) -> Result<Vec<Partition>> {
    let n = dataset.len();
    if m == 0 || m > n {
        return Err(SimError::TooManyClients {
            samples: n,
            clients: m,
        });
    }
    if !(std_factor >= 0.0 && std_factor.is_finite()) {
        return Err(SimError::InvalidArgument(format!(
            "partition std factor {std_factor} must be a finite non-negative number"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Partition, &[]);
    let mu = n as f64 / m as f64;
    let sizes = if std_factor == 0.0 {
        vec![mu; m]
    } else {
        let dist = Normal::new(mu, std_factor * mu).expect("finite positive std");
        (0..m).map(|_| dist.sample(&mut rng).max(1.0)).collect()
    };
    let sizes = rescale_sizes(&sizes, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .enumerate()
        .map(|(client_id, len)| {
            let mut sample_indices = order[start..start + len].to_vec();
            sample_indices.sort_unstable();
            start += len;
            Partition {
                client_id,
                sample_indices,
            }
        })
        .collect())
}

/// Integer sizes, each at least 1, proportional to `raw` and summing to `n`
/// (largest-remainder rounding, ties by index).
fn rescale_sizes(raw: &[f64], n: usize) -> Vec<usize> {
    let m = raw.len();
    let total: f64 = raw.iter().sum();
    let scaled: Vec<f64> = raw.iter().map(|s| s * n as f64 / total).collect();
    let mut sizes: Vec<usize> = scaled.iter().map(|s| (s.floor() as usize).max(1)).collect();
    let mut assigned: usize = sizes.iter().sum();

    let mut by_remainder: Vec<usize> = (0..m).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < n {
        sizes[by_remainder[i % m]] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > n {
        // clamping small draws up to 1 can overshoot; trim the largest
        let (j, _) = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("m >= 1");
        sizes[j] -= 1;
        assigned -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset::new(
            (0..n).map(|i| i as f64).collect(),
            vec![1.0; n],
            1,
            TaskKind::Regression,
        )
        .unwrap()
    }

    #[test]
    fn one_sample_per_client_without_variance() {
        let parts = partition_dataset(&toy(100), 100, 0.0, 1).unwrap();
        assert!(parts.iter().all(|p| p.len() == 1));
    }

    #[test]
    fn boston_sized_partition_covers_everything() {
        let parts = partition_dataset(&toy(506), 5, 0.3, 9).unwrap();
        assert_eq!(parts.len(), 5);
        assert_eq!(parts.iter().map(Partition::len).sum::<usize>(), 506);
        assert!(parts.iter().all(|p| !p.is_empty()));
        let mut all: Vec<usize> = parts
            .iter()
            .flat_map(|p| p.sample_indices.clone())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..506).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_seed_deterministic() {
        let a = partition_dataset(&toy(20), 4, 0.3, 42).unwrap();
        let b = partition_dataset(&toy(20), 4, 0.3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn more_clients_than_samples_is_rejected() {
        assert!(matches!(
            partition_dataset(&toy(3), 4, 0.3, 0),
            Err(SimError::TooManyClients {
                samples: 3,
                clients: 4
            })
        ));
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(vec![0.0, 1.0], vec![1.0, 0.0], 1, TaskKind::BinaryMargin).is_err());
        assert!(Dataset::new(
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            1,
            TaskKind::Classification { classes: 2 }
        )
        .is_err());
        assert!(Dataset::new(vec![0.0], vec![1.0, 2.0], 1, TaskKind::Regression).is_err());
    }

    #[test]
    fn regression_targets_shifted_positive() {
        let mut ds = Dataset::new(
            vec![0.0, 1.0, 2.0],
            vec![-3.0, 0.0, 2.0],
            1,
            TaskKind::Regression,
        )
        .unwrap();
        ds.shift_targets_positive();
        assert_eq!(ds.labels(), &[1.0, 4.0, 6.0]);
    }

    #[test]
    fn csv_loader_normalises_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,label,b\n1,-1,10\n3,2,10\n2,1,30\n").unwrap();
        let ds = Dataset::from_csv(&path, TaskKind::Regression).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(0), &[0.0, 0.0]);
        assert_eq!(ds.row(1), &[1.0, 0.0]);
        assert_eq!(ds.row(2), &[0.5, 1.0]);
        assert_eq!(ds.labels(), &[1.0, 4.0, 3.0]);

        std::fs::write(&path, "x,label\n0.5,2\n0.1,0\n").unwrap();
        let ds = Dataset::from_csv(&path, TaskKind::Classification { classes: 0 }).unwrap();
        assert_eq!(ds.kind(), TaskKind::Classification { classes: 3 });

        std::fs::write(&path, "x,y\n0.5,2\n").unwrap();
        assert!(Dataset::from_csv(&path, TaskKind::Regression).is_err());
    }

    #[test]
    fn synthetic_generators_produce_valid_sets() {
        let r = Dataset::synthetic_regression(200, 13, 1.0, 3).unwrap();
        assert!(r.labels().iter().all(|&y| y > 0.0));
        let c = Dataset::synthetic_classification(200, 5, 4, 0.1, 3).unwrap();
        assert_eq!(c.kind(), TaskKind::Classification { classes: 4 });
        let s = Dataset::synthetic_margin(200, 6, 0.05, 3).unwrap();
        assert!(s.labels().iter().any(|&y| y > 0.0) && s.labels().iter().any(|&y| y < 0.0));
        let (train, test) = s.split(0.2, 1).unwrap();
        assert_eq!(train.len() + test.len(), 200);
        assert_eq!(test.len(), 40);
    }
}
