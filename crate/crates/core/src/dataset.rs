//! Labeled feature datasets with train/val/test splits.
//!
//! The synthetic generator draws one unit-norm Gaussian mean per class and
//! scatters points around it; splits are stratified 70/15/15 per class. CSV
//! persistence uses a header row, feature columns and a trailing integer
//! label column; loading re-derives the same stratified split, so a saved
//! and reloaded dataset trains identically.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A dataset of `N` rows of `input_dim` features with labels in
/// `[0, num_classes)` and disjoint split index lists.
#[derive(Debug, Clone)]
pub struct Dataset {
    input_dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

/// A borrowed view of selected dataset rows, used as a training batch or an
/// evaluation set.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    dataset: &'a Dataset,
    rows: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.dataset.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes
    }

    pub fn row(&self, i: usize) -> (&'a [f64], usize) {
        let r = self.rows[i];
        (self.dataset.feature_row(r), self.dataset.labels[r])
    }
}

impl Dataset {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        train_idx: Vec<usize>,
        val_idx: Vec<usize>,
        test_idx: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::DatasetFormat { reason: "no rows".into() });
        }
        if features.len() != n * input_dim {
            return Err(Error::DatasetFormat {
                reason: format!("{} feature values for {n} rows of {input_dim}", features.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::DatasetFormat {
                reason: format!("label {bad} outside [0, {num_classes})"),
            });
        }
        let mut seen = vec![false; n];
        for &i in train_idx.iter().chain(&val_idx).chain(&test_idx) {
            if i >= n || seen[i] {
                return Err(Error::DatasetFormat {
                    reason: "split indices must be in range and disjoint".into(),
                });
            }
            seen[i] = true;
        }
        Ok(Self {
            input_dim,
            num_classes,
            features,
            labels,
            train_idx,
            val_idx,
            test_idx,
        })
    }

    /// Gaussian class clusters around random unit-norm means, stratified
    /// 70/15/15 into train/val/test. Deterministic per seed.
    pub fn synth(
        num_classes: usize,
        input_dim: usize,
        n_per_class: usize,
        cluster_spread: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 || input_dim == 0 || n_per_class == 0 {
            return Err(Error::DatasetFormat {
                reason: "num_classes, input_dim and n_per_class must be positive".into(),
            });
        }
        if !(cluster_spread >= 0.0) {
            return Err(Error::DatasetFormat {
                reason: format!("cluster_spread must be nonnegative, got {cluster_spread}"),
            });
        }
        let mut rng = rng_from(seed);
        let mut means = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let mut m: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            m.iter_mut().for_each(|x| *x /= norm);
            means.push(m);
        }
        let n = num_classes * n_per_class;
        let mut features = Vec::with_capacity(n * input_dim);
        let mut labels = Vec::with_capacity(n);
        for class in 0..num_classes {
            for _ in 0..n_per_class {
                for d in 0..input_dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push(means[class][d] + cluster_spread * noise);
                }
                labels.push(class);
            }
        }
        let (train_idx, val_idx, test_idx) = stratified_split(&labels, num_classes);
        Self::new(input_dim, num_classes, features, labels, train_idx, val_idx, test_idx)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_idx,
            Split::Val => &self.val_idx,
            Split::Test => &self.test_idx,
        }
    }

    pub fn split_batch(&self, split: Split) -> Batch<'_> {
        Batch { dataset: self, rows: self.split_indices(split) }
    }

    /// A batch over caller-selected rows (typically a shuffled chunk).
    pub fn batch<'a>(&'a self, rows: &'a [usize]) -> Batch<'a> {
        Batch { dataset: self, rows }
    }

    /// Write `f0,..,f{d-1},label` rows after a header line.
    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.input_dim)
            .map(|d| format!("f{d}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> =
                self.feature_row(i).iter().map(|v| format!("{v}")).collect();
            fields.push(format!("{}", self.labels[i]));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv(std::io::BufWriter::new(file))
    }

    /// Parse the CSV layout written by [`to_csv`](Self::to_csv). The split is
    /// re-derived with the same stratified 70/15/15 rule used at generation.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::DatasetFormat { reason: "missing header".into() })??;
        let cols = header.split(',').count();
        if cols < 2 {
            return Err(Error::DatasetFormat {
                reason: "need at least one feature column and a label column".into(),
            });
        }
        let input_dim = cols - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line_no, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::DatasetFormat {
                    reason: format!("row {}: expected {cols} fields, got {}", line_no + 2, fields.len()),
                });
            }
            for f in &fields[..input_dim] {
                features.push(f.trim().parse::<f64>().map_err(|e| Error::DatasetFormat {
                    reason: format!("row {}: {e}", line_no + 2),
                })?);
            }
            labels.push(fields[input_dim].trim().parse::<usize>().map_err(|e| {
                Error::DatasetFormat { reason: format!("row {}: {e}", line_no + 2) }
            })?);
        }
        if labels.is_empty() {
            return Err(Error::DatasetFormat { reason: "no data rows".into() });
        }
        let num_classes = labels.iter().max().unwrap() + 1;
        let (train_idx, val_idx, test_idx) = stratified_split(&labels, num_classes);
        Self::new(input_dim, num_classes, features, labels, train_idx, val_idx, test_idx)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv(std::io::BufReader::new(file))
    }
}

/// Per class (in row order): first 70% train, next 15% val, remainder test.
fn stratified_split(labels: &[usize], num_classes: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for rows in by_class {
        let n = rows.len();
        let n_train = n * 70 / 100;
        let n_val = n * 15 / 100;
        for (j, idx) in rows.into_iter().enumerate() {
            if j < n_train {
                train.push(idx);
            } else if j < n_train + n_val {
                val.push(idx);
            } else {
                test.push(idx);
            }
        }
    }
    (train, val, test)
}
