//! In-memory labelled datasets: MNIST IDX files, CSV, synthetic Gaussian blobs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{stream, Purpose};

pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if inputs.len() != labels.len() * feature_dim {
            return Err(Error::Dimension {
                context: "dataset inputs",
                expected: labels.len() * feature_dim,
                actual: inputs.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} >= class count {num_classes}"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, self.feature_dim, labels)
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.feature_dim, self.labels.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let b = self.batch(indices)?;
        Ok(Dataset {
            inputs: b.inputs().to_vec(),
            labels: b.labels().to_vec(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        })
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.feature_dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    /// Random `(rest, holdout)` split with `round(len * fraction)` held out.
    pub fn holdout_split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n_hold = (self.len() as f64 * fraction).round() as usize;
        if !(fraction > 0.0 && fraction < 1.0) || n_hold == 0 || n_hold >= self.len() {
            return Err(Error::config(format!(
                "holdout fraction {fraction} of {} samples leaves an empty part",
                self.len()
            )));
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut stream(seed, Purpose::Split, 1));
        let (hold, rest) = perm.split_at(n_hold);
        let mut hold = hold.to_vec();
        let mut rest = rest.to_vec();
        hold.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&rest)?, self.subset(&hold)?))
    }

    /// Per-feature mean and population standard deviation.
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.feature_dim;
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in self.inputs.chunks_exact(d) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in self.inputs.chunks_exact(d) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }

    /// `x ← (x - mean_c)/std_c` per channel, channels laid out contiguously.
    pub fn normalize(&self, mean: &[f64], std: &[f64]) -> Result<Dataset> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::invalid(
                "normalization needs one mean and one std per channel",
            ));
        }
        if let Some(bad) = std.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!(
                "normalization std must be positive, got {bad}"
            )));
        }
        let channels = mean.len();
        if self.feature_dim % channels != 0 {
            return Err(Error::Dimension {
                context: "normalization channels",
                expected: channels,
                actual: self.feature_dim,
            });
        }
        let per_channel = self.feature_dim / channels;
        let mut out = self.clone();
        for row in out.inputs.chunks_exact_mut(self.feature_dim) {
            for (j, x) in row.iter_mut().enumerate() {
                let c = j / per_channel;
                *x = (*x - mean[c]) / std[c];
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`Dataset::normalize`].
pub fn normalize(dataset: &Dataset, mean: &[f64], std: &[f64]) -> Result<Dataset> {
    dataset.normalize(mean, std)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            message: format!(
                "header truncated: need {} bytes, file has {}",
                offset + 4,
                bytes.len()
            ),
        })
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Parse {
            offset: bytes.len().min(expected),
            message: format!(
                "image file length {} does not match expected {expected}",
                bytes.len()
            ),
        });
    }
    Ok((count, rows, cols, &bytes[16..]))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Parse {
            offset: bytes.len().min(expected),
            message: format!(
                "label file length {} does not match expected {expected}",
                bytes.len()
            ),
        });
    }
    Ok(&bytes[8..])
}

/// Decodes an IDX image/label pair held in memory; pixels are scaled to `[0, 1]`.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{count} images but {} labels", labels.len()),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            offset: 8 + pos,
            message: format!("label {} out of range 0..=9", labels[pos]),
        });
    }
    Dataset::new(
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        rows * cols,
        labels.iter().map(|&l| l as usize).collect(),
        10,
    )
}

pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img = read_file(images.as_ref())?;
    let lab = read_file(labels.as_ref())?;
    mnist_from_bytes(&img, &lab)
}

/// Reads `label,x_1,...,x_d` rows without a header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields = record.iter();
        let bad =
            |what: &str| Error::config(format!("{}: row {}: {what}", path.display(), line + 1));
        let label: usize = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("first column must be an integer label"))?;
        let row: Vec<f64> = fields
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("feature is not a number"))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(bad("inconsistent feature count")),
            _ => {}
        }
        inputs.extend(row);
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::config(format!("{}: no rows", path.display())))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(inputs, dim, labels, classes)
}

/// Balanced Gaussian clusters with unit within-class std. Class `k` is
/// centred at `(separation/√2)·e_k`, so every pair of means is `separation`
/// apart. Requires `classes ≤ dim`.
pub fn synth_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config("synthetic blobs need at least two classes"));
    }
    if classes > dim {
        return Err(Error::config(format!(
            "{classes} classes need dim >= {classes}, got {dim}"
        )));
    }
    if !(separation >= 0.0) {
        return Err(Error::config("separation must be >= 0"));
    }
    let mut rng = stream(seed, Purpose::DataGen, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut inputs = Vec::with_capacity(n * dim);
    for &y in &labels {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs.push(z + if j == y { offset } else { 0.0 });
        }
    }
    Dataset::new(inputs, dim, labels, classes)
}
