//! Binary datasets: construction, synthetic generation, CSV persistence,
//! and k-fold splitting.
//!
//! CSV dialect: comma-separated, optional header row, values strictly "0" or
//! "1", optional final column named "label" holding nonnegative integer
//! class labels. A file whose first line consists only of 0/1 tokens is
//! treated as headerless (and therefore unlabeled, since the label column is
//! recognized by name). Parse errors report zero-based (row, column) within
//! the data portion.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// N×D matrix of {0,1} entries with optional labels and canonical feature
/// names (defaulting to f0..f{D−1}).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    x: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    feature_names: Vec<String>,
}

impl BinaryDataset {
    pub fn new(
        x: DMatrix<f64>,
        labels: Option<Vec<usize>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::Degenerate("empty dataset".into()));
        }
        if let Some((i, j)) = x
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
            .map(|flat| (flat % n, flat / n))
        {
            return Err(Error::Usage(format!(
                "entry at row {i}, column {j} is not 0 or 1"
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(Error::Usage(format!(
                    "{} labels for {n} samples",
                    l.len()
                )));
            }
        }
        let feature_names = match feature_names {
            Some(names) => {
                if names.len() != d {
                    return Err(Error::Usage(format!(
                        "{} feature names for {d} columns",
                        names.len()
                    )));
                }
                names
            }
            None => (0..d).map(|j| format!("f{j}")).collect(),
        };
        Ok(Self {
            x,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one row
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.x.row(n).transpose()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Rows at `indices`, in the given order, labels carried along.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Degenerate("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Usage(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let x = DMatrix::from_fn(indices.len(), self.dim(), |i, j| self.x[(indices[i], j)]);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            x,
            labels,
            feature_names: self.feature_names.clone(),
        })
    }
}

/// Knobs of the synthetic protocol: per class, draw `prototypes_per_class`
/// Bernoulli(class mean) prototype vectors, copy each `copies` times, then
/// flip every bit with probability `flip_prob`.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub prototypes_per_class: usize,
    pub copies: usize,
    pub dims: usize,
    pub flip_prob: f64,
    pub class_means: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            prototypes_per_class: 3,
            copies: 50,
            dims: 16,
            flip_prob: 0.1,
            class_means: vec![0.9, 0.5, 0.1],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.prototypes_per_class == 0 || self.copies == 0 || self.dims == 0
        {
            return Err(Error::Usage(
                "classes, prototypes, copies, and dims must be positive".into(),
            ));
        }
        if self.class_means.len() != self.classes {
            return Err(Error::Usage(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.classes
            )));
        }
        if self.class_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Usage("class means must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Usage("flip probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.classes * self.prototypes_per_class * self.copies
    }
}

/// Returns (noisy, clean) datasets. Rows are ordered class-major, then
/// prototype, then copy; labels are class indices. Prototype bits come from
/// the "synthetic/prototypes" stream, flips from "synthetic/noise", so the
/// clean data is unaffected by the flip probability.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(BinaryDataset, BinaryDataset)> {
    cfg.validate()?;
    let mut proto_rng = rng::stream(cfg.seed, "synthetic/prototypes");
    let mut prototypes = Vec::with_capacity(cfg.classes * cfg.prototypes_per_class);
    for class in 0..cfg.classes {
        let mean = cfg.class_means[class];
        for _ in 0..cfg.prototypes_per_class {
            let bits: Vec<f64> = (0..cfg.dims)
                .map(|_| f64::from(proto_rng.random::<f64>() < mean))
                .collect();
            prototypes.push(bits);
        }
    }

    let n = cfg.total_samples();
    let mut clean = DMatrix::zeros(n, cfg.dims);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..cfg.classes {
        for proto in 0..cfg.prototypes_per_class {
            let bits = &prototypes[class * cfg.prototypes_per_class + proto];
            for _ in 0..cfg.copies {
                for (j, &b) in bits.iter().enumerate() {
                    clean[(row, j)] = b;
                }
                labels.push(class);
                row += 1;
            }
        }
    }

    let mut noise_rng = rng::stream(cfg.seed, "synthetic/noise");
    let mut noisy = clean.clone();
    for i in 0..n {
        for j in 0..cfg.dims {
            if noise_rng.random::<f64>() < cfg.flip_prob {
                noisy[(i, j)] = 1.0 - noisy[(i, j)];
            }
        }
    }

    let clean_ds = BinaryDataset::new(clean, Some(labels.clone()), None)?;
    let noisy_ds = BinaryDataset::new(noisy, Some(labels), None)?;
    Ok((noisy_ds, clean_ds))
}

pub fn save_csv(ds: &BinaryDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = ds.feature_names().join(",");
    if ds.labels().is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}")?;
    for i in 0..ds.len() {
        let mut line = String::with_capacity(2 * ds.dim() + 8);
        for j in 0..ds.dim() {
            if j > 0 {
                line.push(',');
            }
            line.push(if ds.matrix()[(i, j)] == 1.0 { '1' } else { '0' });
        }
        if let Some(labels) = ds.labels() {
            line.push(',');
            line.push_str(&labels[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<BinaryDataset> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut lines = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .peekable();

    let first = match lines.peek() {
        Some(l) => *l,
        None => return Err(Error::Degenerate("empty dataset".into())),
    };
    let first_tokens: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = first_tokens.iter().any(|t| *t != "0" && *t != "1");
    let (feature_names, labeled) = if has_header {
        lines.next();
        let labeled = first_tokens.last() == Some(&"label");
        let names: Vec<String> = if labeled {
            first_tokens[..first_tokens.len() - 1]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            first_tokens.iter().map(|s| s.to_string()).collect()
        };
        (Some(names), labeled)
    } else {
        (None, false)
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut expected_cols: Option<usize> = feature_names
        .as_ref()
        .map(|n| n.len() + usize::from(labeled));
    for (row_idx, line) in lines.enumerate() {
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        if let Some(expected) = expected_cols {
            if tokens.len() != expected {
                return Err(Error::Parse {
                    row: row_idx,
                    col: tokens.len().min(expected),
                    message: format!("expected {expected} fields, found {}", tokens.len()),
                });
            }
        } else {
            expected_cols = Some(tokens.len());
        }
        let value_count = tokens.len() - usize::from(labeled);
        let mut row = Vec::with_capacity(value_count);
        for (col, tok) in tokens[..value_count].iter().enumerate() {
            match *tok {
                "0" => row.push(0.0),
                "1" => row.push(1.0),
                other => {
                    return Err(Error::Parse {
                        row: row_idx,
                        col,
                        message: format!("expected 0 or 1, found {other:?}"),
                    })
                }
            }
        }
        if labeled {
            let tok = tokens[value_count];
            let label: usize = tok.parse().map_err(|_| Error::Parse {
                row: row_idx,
                col: value_count,
                message: format!("expected integer label, found {tok:?}"),
            })?;
            labels.push(label);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let d = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    BinaryDataset::new(x, labeled.then_some(labels), feature_names)
}

/// Seeded permutation of 0..n cut into `folds` contiguous blocks; block f is
/// fold f's test set and the rest its training set. Indices are returned
/// sorted within each side.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::Usage(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Usage(format!(
            "cannot cut {n} samples into {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "kfold"));

    let base = n / folds;
    let extra = n % folds;
    let mut splits = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut test: Vec<usize> = perm[start..start + size].to_vec();
        let mut train: Vec<usize> = perm[..start]
            .iter()
            .chain(perm[start + size..].iter())
            .copied()
            .collect();
        test.sort_unstable();
        train.sort_unstable();
        splits.push((train, test));
        start += size;
    }
    Ok(splits)
}
