//! Feature datasets: synthetic Gaussian blobs and the CSV interchange
//! format `split,class,f0,...,f{d-1}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class: usize,
    pub split: Split,
}

/// Samples with a uniform feature dimension and contiguous class ids from 0.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    dim: usize,
    n_classes: usize,
    samples: Vec<Sample>,
}

impl FeatureDataset {
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("dataset holds no samples".into()));
        }
        let dim = samples[0].features.len();
        if let Some(bad) = samples.iter().position(|s| s.features.len() != dim) {
            return Err(Error::Dataset(format!(
                "sample {bad} has {} features, expected {dim}",
                samples[bad].features.len()
            )));
        }
        let ids: BTreeSet<usize> = samples.iter().map(|s| s.class).collect();
        let n_classes = ids.len();
        if ids.iter().copied().ne(0..n_classes) {
            return Err(Error::Dataset(format!(
                "class ids must be contiguous naturals from 0, got {ids:?}"
            )));
        }
        Ok(Self { dim, n_classes, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Indices of the training samples of `class`, in dataset order.
    pub fn train_indices(&self, class: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class == class && s.split == Split::Train)
            .map(|(i, _)| i)
            .collect()
    }

    /// `(features, class)` of every training sample of the given classes.
    pub fn train_set(&self, classes: &[usize]) -> Vec<(Vec<f64>, usize)> {
        self.samples
            .iter()
            .filter(|s| s.split == Split::Train && classes.contains(&s.class))
            .map(|s| (s.features.clone(), s.class))
            .collect()
    }

    /// `(features, class)` of every test sample of the given classes.
    pub fn test_set(&self, classes: &[usize]) -> Vec<(Vec<f64>, usize)> {
        self.samples
            .iter()
            .filter(|s| s.split == Split::Test && classes.contains(&s.class))
            .map(|s| (s.features.clone(), s.class))
            .collect()
    }

    pub fn test_count(&self, class: usize) -> usize {
        self.samples
            .iter()
            .filter(|s| s.class == class && s.split == Split::Test)
            .count()
    }

    /// Isotropic unit-variance Gaussian blobs with class means placed at
    /// pairwise distance at least `separation`. Deterministic per seed.
    pub fn generate_synthetic(
        n_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_classes == 0 || train_per_class == 0 || test_per_class == 0 || dim == 0 {
            return Err(Error::Dataset("counts and dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        let mut radius = separation.max(1.0);
        let mut attempts = 0usize;
        while means.len() < n_classes {
            let mut candidate: Vec<f64> =
                (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in candidate.iter_mut() {
                *v *= radius / norm;
            }
            let ok = means
                .iter()
                .all(|m| dist(m, &candidate) >= separation);
            if ok {
                means.push(candidate);
                attempts = 0;
            } else {
                attempts += 1;
                if attempts > 200 {
                    radius *= 1.5;
                    attempts = 0;
                }
            }
        }

        let mut samples = Vec::with_capacity(n_classes * (train_per_class + test_per_class));
        for (class, mean) in means.iter().enumerate() {
            for i in 0..train_per_class + test_per_class {
                let features: Vec<f64> = mean
                    .iter()
                    .map(|&m| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        m + noise
                    })
                    .collect();
                samples.push(Sample {
                    features,
                    class,
                    split: if i < train_per_class { Split::Train } else { Split::Test },
                });
            }
        }
        Self::from_samples(samples)
    }

    /// Parse the CSV interchange format. Errors carry 1-based line numbers.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Dataset("empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "split" || cols[1] != "class" {
            return Err(Error::Dataset(format!(
                "line 1: header must read 'split,class,f0,...', got '{header}'"
            )));
        }
        for (i, c) in cols[2..].iter().enumerate() {
            if *c != format!("f{i}") {
                return Err(Error::Dataset(format!(
                    "line 1: feature column {} must be named f{i}, got '{c}'",
                    i + 2
                )));
            }
        }
        let dim = cols.len() - 2;

        let mut samples = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Dataset(format!(
                    "line {lineno}: expected {} fields, got {}",
                    dim + 2,
                    fields.len()
                )));
            }
            let split = match fields[0] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Dataset(format!(
                        "line {lineno}: split must be 'train' or 'test', got '{other}'"
                    )))
                }
            };
            let class: usize = fields[1].parse().map_err(|_| {
                Error::Dataset(format!("line {lineno}: class '{}' is not a natural", fields[1]))
            })?;
            let features: Vec<f64> = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Dataset(format!("line {lineno}: non-numeric feature '{f}'"))
                    })
                })
                .collect::<Result<_>>()?;
            samples.push(Sample { features, class, split });
        }
        Self::from_samples(samples)
    }

    /// Emit the CSV interchange format with LF line endings. Features are
    /// printed with Rust's shortest round-trip formatting, so a load of the
    /// written file reproduces this dataset exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("split,class");
        for i in 0..self.dim {
            write!(out, ",f{i}").expect("string write");
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(match s.split {
                Split::Train => "train",
                Split::Test => "test",
            });
            write!(out, ",{}", s.class).expect("string write");
            for f in &s.features {
                write!(out, ",{f}").expect("string write");
            }
            out.push('\n');
        }
        crate::report::write_atomic(path, out.as_bytes())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-dimension affine normalization fitted on training data. Squared
/// distances over raw desk-scale feature magnitudes condition the losses so
/// badly that training cannot find a workable step size; fitting the
/// transform once on the base session and freezing it plays the role image
/// normalization does for a vision backbone.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the given samples (one row per sample).
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Result<Self> {
        let mut rows_iter = rows.into_iter();
        let first = rows_iter
            .next()
            .ok_or_else(|| Error::Dataset("cannot standardize an empty sample set".into()))?;
        let dim = first.len();
        let mut mean = first.to_vec();
        let mut m2 = vec![0.0; dim];
        let mut count = 1.0;
        for row in rows_iter {
            count += 1.0;
            for j in 0..dim {
                let delta = row[j] - mean[j];
                mean[j] += delta / count;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        let std = m2
            .into_iter()
            .map(|v| (v / count).sqrt().max(1e-12))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.std[j])
            .collect()
    }

    /// Dataset copy with every sample transformed.
    pub fn apply_dataset(&self, ds: &FeatureDataset) -> FeatureDataset {
        let samples = ds
            .samples
            .iter()
            .map(|s| Sample {
                features: self.apply(&s.features),
                class: s.class,
                split: s.split,
            })
            .collect();
        FeatureDataset { dim: ds.dim, n_classes: ds.n_classes, samples }
    }
}
