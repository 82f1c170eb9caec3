//! Datasets: seeded Gaussian blobs, the CIFAR-100 binary format, and
//! base/novel class splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};
use crate::linalg::DenseMatrix;
use crate::rng;

/// Bytes per CIFAR-100 record: coarse label, fine label, 3×32×32 pixels.
pub const CIFAR100_RECORD_LEN: usize = 3074;
pub const CIFAR100_PIXELS: usize = 3072;
pub const CIFAR100_CLASSES: usize = 100;

/// Fraction of each class assigned to the train split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// Inputs with class labels and a per-row train/eval assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Vec<Split>,
}

/// Rows of one split (or one subset of classes) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose label is in `classes`.
    pub fn restrict(&self, classes: &[usize]) -> Subset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        Subset {
            inputs: self.inputs.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Same rows with labels passed through `f`.
    pub fn relabel(&self, f: impl Fn(usize) -> usize) -> Subset {
        Subset {
            inputs: self.inputs.clone(),
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, split: Split) -> Subset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.split[i] == split).collect();
        Subset {
            inputs: self.inputs.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn train(&self) -> Subset {
        self.subset(Split::Train)
    }

    pub fn eval(&self) -> Subset {
        self.subset(Split::Eval)
    }

    /// Checks labels are in range and every class has train and eval rows.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.inputs.rows() || self.split.len() != self.inputs.rows() {
            return Err(RfrError::Dimension(
                "labels/split length differs from the number of input rows".into(),
            ));
        }
        let mut train = vec![0usize; self.num_classes];
        let mut eval = vec![0usize; self.num_classes];
        for (&l, &s) in self.labels.iter().zip(&self.split) {
            if l >= self.num_classes {
                return Err(RfrError::Dimension(format!(
                    "label {l} outside 0..{}",
                    self.num_classes
                )));
            }
            match s {
                Split::Train => train[l] += 1,
                Split::Eval => eval[l] += 1,
            }
        }
        for c in 0..self.num_classes {
            if train[c] == 0 || eval[c] == 0 {
                return Err(RfrError::Dimension(format!(
                    "class {c} needs at least one train and one eval sample ({} train, {} eval)",
                    train[c], eval[c]
                )));
            }
        }
        Ok(())
    }

    /// Standardizes every input column with the mean and standard deviation of the train rows.
    pub fn standardize(&mut self) {
        let d = self.input_dim();
        let train: Vec<usize> = (0..self.len())
            .filter(|&i| self.split[i] == Split::Train)
            .collect();
        if train.is_empty() {
            return;
        }
        let n = train.len() as f64;
        for j in 0..d {
            let mean = train.iter().map(|&i| self.inputs.get(i, j)).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|&i| (self.inputs.get(i, j) - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let v = self.inputs.get(i, j);
                self.inputs.set(i, j, (v - mean) / sd);
            }
        }
    }

    /// Writes `<stem>.csv` (matrix format) and `<stem>.json` (labels, split, metadata).
    pub fn save(&self, stem: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        let stem = stem.as_ref();
        self.inputs.write_csv(stem.with_extension("csv"))?;
        let sidecar = Sidecar {
            num_classes: self.num_classes,
            labels: self.labels.clone(),
            split: self.split.clone(),
            meta,
        };
        let path = stem.with_extension("json");
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| RfrError::io(&path, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let stem = stem.as_ref();
        let inputs = DenseMatrix::read_csv(stem.with_extension("csv"))?;
        let path = stem.with_extension("json");
        let text = std::fs::read_to_string(&path).map_err(|e| RfrError::io(&path, e))?;
        let sc: Sidecar = serde_json::from_str(&text)?;
        let ds = LabeledDataset {
            inputs,
            labels: sc.labels,
            num_classes: sc.num_classes,
            split: sc.split,
        };
        ds.validate()?;
        Ok((ds, sc.meta))
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    num_classes: usize,
    labels: Vec<usize>,
    split: Vec<Split>,
    meta: serde_json::Value,
}

/// Seeded Gaussian blobs: class means uniform on the unit sphere, samples
/// `mean + spread·N(0, I)`, first 80% of each class in the train split.
pub fn make_gaussian_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(RfrError::Dimension(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if dim == 0 || per_class < 2 {
        return Err(RfrError::Dimension(format!(
            "need dim >= 1 and at least 2 samples per class (dim={dim}, per_class={per_class})"
        )));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(RfrError::BadSpread(spread));
    }
    let mut r = rng::stream(seed, rng::STREAM_DATA);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut m: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r)).collect();
        let n = crate::linalg::norm(&m);
        m.iter_mut().for_each(|v| *v /= n);
        means.push(m);
    }
    let n_train = ((per_class as f64 * TRAIN_FRACTION).round() as usize).clamp(1, per_class - 1);
    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    let mut split = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for k in 0..per_class {
            data.extend(mean.iter().map(|m| m + spread * rng::normal(&mut r)));
            labels.push(c);
            split.push(if k < n_train { Split::Train } else { Split::Eval });
        }
    }
    Ok(LabeledDataset {
        inputs: DenseMatrix::new(labels.len(), dim, data)?,
        labels,
        num_classes,
        split,
    })
}

/// Parses a CIFAR-100 binary file. Rows are marked [`Split::Train`]; use
/// [`load_cifar100`] to combine a train and a test file.
pub fn parse_cifar100_binary(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| RfrError::io(path, e))?;
    parse_cifar100_bytes(&bytes, Split::Train)
}

pub fn parse_cifar100_bytes(bytes: &[u8], split: Split) -> Result<LabeledDataset> {
    if !bytes.len().is_multiple_of(CIFAR100_RECORD_LEN) {
        return Err(RfrError::TruncatedFile(bytes.len()));
    }
    let n = bytes.len() / CIFAR100_RECORD_LEN;
    let mut data = Vec::with_capacity(n * CIFAR100_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (record, chunk) in bytes.chunks_exact(CIFAR100_RECORD_LEN).enumerate() {
        let fine = chunk[1];
        if fine as usize >= CIFAR100_CLASSES {
            return Err(RfrError::LabelOutOfRange {
                record,
                label: fine,
            });
        }
        labels.push(fine as usize);
        data.extend(chunk[2..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(LabeledDataset {
        inputs: DenseMatrix::new(n, CIFAR100_PIXELS, data)?,
        labels,
        num_classes: CIFAR100_CLASSES,
        split: vec![split; n],
    })
}

/// Encodes records in the CIFAR-100 binary layout.
pub fn encode_cifar100(records: &[(u8, u8, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR100_RECORD_LEN);
    for (coarse, fine, pixels) in records {
        assert_eq!(pixels.len(), CIFAR100_PIXELS, "a record holds 3072 pixel bytes");
        out.push(*coarse);
        out.push(*fine);
        out.extend_from_slice(pixels);
    }
    out
}

/// Loads `train.bin` and `test.bin` from the standard distribution layout.
pub fn load_cifar100(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<LabeledDataset> {
    let read = |p: &Path, s| -> Result<LabeledDataset> {
        let bytes = std::fs::read(p).map_err(|e| RfrError::io(p, e))?;
        parse_cifar100_bytes(&bytes, s)
    };
    let a = read(train.as_ref(), Split::Train)?;
    let b = read(test.as_ref(), Split::Eval)?;
    let mut labels = a.labels;
    labels.extend(b.labels);
    let mut split = a.split;
    split.extend(b.split);
    Ok(LabeledDataset {
        inputs: a.inputs.vstack(&b.inputs)?,
        labels,
        num_classes: CIFAR100_CLASSES,
        split,
    })
}

/// Where the class ordering comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum OrderingSource {
    Seed(u64),
    Explicit(Vec<usize>),
}

/// Reads a class ordering: integers separated by whitespace or commas.
pub fn load_ordering(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RfrError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            out.push(tok.parse().map_err(|_| RfrError::Parse {
                line: i + 1,
                msg: format!("{tok:?} is not a class id"),
            })?);
        }
    }
    Ok(out)
}

/// Base task followed by equally sized novel tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub ordering: Vec<usize>,
    pub base: Vec<usize>,
    pub novel_tasks: Vec<Vec<usize>>,
    /// Trailing classes that did not fill a whole task.
    pub dropped: Vec<usize>,
}

impl TaskSplit {
    pub fn num_sessions(&self) -> usize {
        1 + self.novel_tasks.len()
    }

    /// Classes introduced in session `t` (0 = base).
    pub fn session_classes(&self, t: usize) -> &[usize] {
        if t == 0 {
            &self.base
        } else {
            &self.novel_tasks[t - 1]
        }
    }

    /// Position of each class in the ordering, i.e. its head row.
    pub fn head_index(&self) -> Vec<Option<usize>> {
        let n = self.ordering.iter().copied().max().map_or(0, |m| m + 1);
        let mut idx = vec![None; n];
        for (pos, &c) in self.ordering.iter().enumerate() {
            idx[c] = Some(pos);
        }
        idx
    }
}

pub fn make_task_split(
    num_classes: usize,
    base: usize,
    split_size: usize,
    source: &OrderingSource,
) -> Result<TaskSplit> {
    if base == 0 || split_size == 0 {
        return Err(RfrError::BadSplit(format!(
            "base classes ({base}) and split size ({split_size}) must be positive"
        )));
    }
    if base > num_classes || (base < num_classes && base + split_size > num_classes) {
        return Err(RfrError::BadSplit(format!(
            "{base} base classes plus tasks of {split_size} do not fit in {num_classes} classes"
        )));
    }
    let ordering = match source {
        OrderingSource::Seed(seed) => {
            let mut o: Vec<usize> = (0..num_classes).collect();
            o.shuffle(&mut rng::stream(*seed, rng::STREAM_ORDER));
            o
        }
        OrderingSource::Explicit(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..num_classes).collect::<Vec<_>>() {
                return Err(RfrError::BadSplit(format!(
                    "ordering must be a permutation of 0..{num_classes}"
                )));
            }
            o.clone()
        }
    };
    let rest = &ordering[base..];
    let novel_tasks: Vec<Vec<usize>> = rest.chunks_exact(split_size).map(<[usize]>::to_vec).collect();
    let dropped = rest.chunks_exact(split_size).remainder().to_vec();
    if !dropped.is_empty() {
        log::warn!(
            "{} classes do not fill a task of {split_size} and are dropped: {dropped:?}",
            dropped.len()
        );
    }
    Ok(TaskSplit {
        base: ordering[..base].to_vec(),
        ordering,
        novel_tasks,
        dropped,
    })
}

/// Resolves an ordering file relative to a config directory.
pub fn resolve_path(base_dir: Option<&Path>, p: &Path) -> PathBuf {
    match base_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}
