//! Datasets: IDX (Fashion-MNIST), CIFAR-10 binary batches, synthetic Gaussian blobs, and
//! per-sample normalization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, ParseErrorKind, Result};
use crate::linalg::{mean_variance, Vector};
use crate::network::pad_input;
use crate::rng::SeededRng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Vector>,
    pub labels: Vec<usize>,
    pub width: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Vector>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::shape("dataset labels", samples.len(), labels.len()));
        }
        let width = samples.first().map_or(0, |s| s.len());
        if let Some(i) = samples.iter().position(|s| s.len() != width) {
            return Err(Error::shape(format!("sample {i}"), width, samples[i].len()));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {} of sample {i} is out of range for {classes} classes",
                labels[i]
            )));
        }
        Ok(Dataset {
            name: name.into(),
            samples,
            labels,
            width,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at the given positions, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            width: self.width,
            classes: self.classes,
        }
    }

    /// Seeded shuffle, then the first `n` samples (all of them when `n >= len`).
    pub fn shuffled_take(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        SeededRng::new(seed).shuffle(&mut idx);
        idx.truncate(n.min(self.len()));
        let mut out = self.select(&idx);
        out.name = format!("{}[{}@{seed}]", self.name, out.len());
        out
    }

    /// Padded inputs `(0_C | x)` for the given samples, flattened row-major.
    pub fn padded_batch(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * (self.classes + self.width));
        for &i in indices {
            out.extend_from_slice(&pad_input(&self.samples[i], self.classes));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    #[default]
    PerSample,
}

/// Zero mean and variance `target_variance` for every sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    pub target_variance: f64,
}

impl NormalizationSpec {
    pub fn per_sample(target_variance: f64) -> Self {
        NormalizationSpec {
            mode: NormalizationMode::PerSample,
            target_variance,
        }
    }
}

/// Centers every sample and rescales it to the target population variance.
pub fn normalize(dataset: &Dataset, spec: &NormalizationSpec) -> Result<Dataset> {
    if !(spec.target_variance > 0.0 && spec.target_variance.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "target variance must be positive, got {}",
            spec.target_variance
        )));
    }
    let scale_to = spec.target_variance.sqrt();
    let mut degenerate = Vec::new();
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let (mean, var) = mean_variance(s);
        if var == 0.0 {
            degenerate.push(i);
            continue;
        }
        let k = scale_to / var.sqrt();
        samples.push(s.map(|v| (v - mean) * k));
    }
    if !degenerate.is_empty() {
        return Err(Error::ZeroVariance(degenerate));
    }
    Ok(Dataset {
        name: dataset.name.clone(),
        samples,
        labels: dataset.labels.clone(),
        width: dataset.width,
        classes: dataset.classes,
    })
}

fn parse_err(format: &'static str, offset: usize, kind: ParseErrorKind) -> Error {
    Error::Parse(ParseError {
        format,
        offset: offset as u64,
        kind,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, format: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            parse_err(
                format,
                bytes.len(),
                ParseErrorKind::Truncated {
                    expected: (offset + 4) as u64,
                    actual: bytes.len() as u64,
                },
            )
        })
}

fn check_magic(bytes: &[u8], expected: u32, format: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, format)?;
    if found != expected {
        return Err(parse_err(
            format,
            0,
            ParseErrorKind::BadMagic {
                expected: expected.to_be_bytes().to_vec(),
                found: found.to_be_bytes().to_vec(),
            },
        ));
    }
    Ok(())
}

/// Decodes an IDX image file into `(rows * cols)`-long vectors scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vector>, usize, usize)> {
    const F: &str = "idx-images";
    check_magic(bytes, IDX_IMAGES_MAGIC, F)?;
    let count = be_u32(bytes, 4, F)? as usize;
    let rows = be_u32(bytes, 8, F)? as usize;
    let cols = be_u32(bytes, 12, F)? as usize;
    let n = rows * cols;
    let expected = 16 + count * n;
    if bytes.len() < expected {
        return Err(parse_err(
            F,
            bytes.len(),
            ParseErrorKind::Truncated {
                expected: expected as u64,
                actual: bytes.len() as u64,
            },
        ));
    }
    let images = bytes[16..expected]
        .chunks_exact(n.max(1))
        .take(count)
        .map(|px| px.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok((images, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    const F: &str = "idx-labels";
    check_magic(bytes, IDX_LABELS_MAGIC, F)?;
    let count = be_u32(bytes, 4, F)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(parse_err(
            F,
            bytes.len(),
            ParseErrorKind::Truncated {
                expected: expected as u64,
                actual: bytes.len() as u64,
            },
        ));
    }
    Ok(bytes[8..expected].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an uncompressed IDX image/label pair. The class count is `max label + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let (images, _, _) = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path.as_ref())?)?;
    if images.len() != labels.len() {
        return Err(Error::shape("IDX image/label count", images.len(), labels.len()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, images, labels, classes)
}

/// Decodes CIFAR-10 binary records (1 label byte + 3072 channel-major pixel bytes each).
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<Vector>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(parse_err(
            "cifar10",
            offset,
            ParseErrorKind::Misaligned {
                len: bytes.len() as u64,
                record: CIFAR_RECORD as u64,
            },
        ));
    }
    let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = usize::from(rec[0]);
        if label >= 10 {
            return Err(parse_err(
                "cifar10",
                k * CIFAR_RECORD,
                ParseErrorKind::Invalid(format!("label {label} out of range")),
            ));
        }
        labels.push(label);
        samples.push(rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect());
    }
    Ok((samples, labels))
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let (s, l) = parse_cifar10(&read_file(p.as_ref())?)?;
        samples.extend(s);
        labels.extend(l);
    }
    Dataset::new("cifar10", samples, labels, 10)
}

/// `per_class` samples per class from N(separation * mu_c, I) with random unit directions
/// `mu_c`. Samples are interleaved: sample `i` has label `i % classes`.
pub fn synth_blobs(classes: usize, width: usize, per_class: usize, separation: f64, rng: &mut SeededRng) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig("synthetic blobs need at least 2 classes".into()));
    }
    if width == 0 {
        return Err(Error::InvalidConfig("synthetic blobs need a positive width".into()));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let d: Vec<f64> = (0..width).map(|_| rng.standard_normal()).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.into_iter().map(|v| separation * v / norm).collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for i in 0..classes * per_class {
        let c = i % classes;
        samples.push(centers[c].iter().map(|m| m + rng.standard_normal()).collect());
        labels.push(c);
    }
    Dataset::new(format!("blobs-c{classes}-n{width}-s{separation}"), samples, labels, classes)
}
