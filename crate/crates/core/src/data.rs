//! Datasets: IDX (MNIST) files, synthetic Gaussian tasks, batching.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::DVector;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::net::{Sample, Target};
use crate::rng::{derived_rng, gaussian, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Pixels divided by 255.
    UnitInterval,
    /// Entries `N(0, 1/d)`.
    GaussianUnitNorm,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::UnitInterval => "unit-interval",
            Normalization::GaussianUnitNorm => "gaussian-unit-norm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Targets `tanh(theta . x)`.
    GaussRegression,
    /// Targets `sign(theta . x)` in `{-1, 1}`.
    TwoClass,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gauss-regression" => Ok(SyntheticKind::GaussRegression),
            "two-class" => Ok(SyntheticKind::TwoClass),
            _ => Err(Error::UnknownName { kind: "synthetic task", value: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<Target>,
    pub d: usize,
    /// Number of classes for classification data.
    pub classes: Option<usize>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample::new(self.inputs[i].clone(), self.targets[i])
    }

    pub fn samples(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.sample(i)).collect()
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
            ..self.clone()
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or(Error::Truncated(what))
}

/// Parses an IDX image file: returns `(rows, cols, pixels)` with one byte per pixel.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let magic = be_u32(bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Magic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = be_u32(bytes, 4, "image header")? as usize;
    let rows = be_u32(bytes, 8, "image header")? as usize;
    let cols = be_u32(bytes, 12, "image header")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * size {
        return Err(Error::Truncated("image data"));
    }
    Ok((rows, cols, body[..n * size].chunks_exact(size.max(1)).take(n).map(<[u8]>::to_vec).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Magic { expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = be_u32(bytes, 4, "label header")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Truncated("label data"));
    }
    Ok(body[..n].to_vec())
}

pub fn write_idx_images<W: Write>(mut w: W, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Precondition(format!("image has {} pixels, expected {}", img.len(), rows * cols)));
        }
        w.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Builds a classification dataset from IDX byte buffers, pixels scaled to `[0, 1]`.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (rows, cols, pix) = parse_idx_images(images)?;
    let labs = parse_idx_labels(labels)?;
    if pix.len() != labs.len() {
        return Err(Error::CountMismatch { images: pix.len(), labels: labs.len() });
    }
    if pix.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let classes = 10;
    let mut targets = Vec::with_capacity(labs.len());
    for &l in &labs {
        if l as usize >= classes {
            return Err(Error::InvalidClass { class: l as usize, classes });
        }
        targets.push(Target::Class(l as usize));
    }
    let d = rows * cols;
    let inputs = pix.iter().map(|p| DVector::from_iterator(d, p.iter().map(|&b| b as f64 / 255.0))).collect();
    Ok(Dataset { inputs, targets, d, classes: Some(classes), normalization: Normalization::UnitInterval })
}

/// Loads IDX image and label files; gzip-compressed files are detected by their header.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    mnist_from_bytes(&read_all(images)?, &read_all(labels)?)
}

/// I.i.d. `N(0, I/d)` inputs with targets from a fixed random teacher. The
/// first three inputs are pairwise distinct and `xi_0 . xi_1` is bounded
/// away from zero (redrawn otherwise).
pub fn synthetic_task(d: usize, n: usize, seed: u64, kind: SyntheticKind) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::Precondition("synthetic task needs d >= 1 and n >= 1".into()));
    }
    let scale = (d as f64).powf(-0.5);
    let draw = |row: u64| DVector::from_iterator(d, (0..d).map(|q| scale * gaussian(seed, Stream::Data, 0, row, q as u64)));
    let theta = DVector::from_iterator(d, (0..d).map(|q| gaussian(seed, Stream::Data, 1, 0, q as u64)));
    let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut row = 0u64;
    while inputs.len() < n {
        let xi = draw(row);
        row += 1;
        let i = inputs.len();
        if i < 3 {
            let distinct = inputs.iter().all(|p| (p - &xi).norm() > 1e-6);
            let overlap = i != 1 || inputs[0].dot(&xi).abs() > 1e-3 * inputs[0].norm() * xi.norm();
            if !(distinct && overlap) {
                continue;
            }
        }
        inputs.push(xi);
    }
    let targets = inputs
        .iter()
        .map(|xi| {
            let s = theta.dot(xi);
            Target::Scalar(match kind {
                SyntheticKind::GaussRegression => s.tanh(),
                SyntheticKind::TwoClass => {
                    if s >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
        })
        .collect();
    Ok(Dataset { inputs, targets, d, classes: None, normalization: Normalization::GaussianUnitNorm })
}

/// Index batches for `epochs` passes, reshuffled each epoch; the final
/// partial batch of an epoch is dropped.
pub fn batches(n: usize, batch: usize, seed: u64, epochs: usize) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::Precondition("batch size must be positive".into()));
    }
    if batch > n {
        return Err(Error::BatchTooLarge { batch, n });
    }
    let mut out = Vec::with_capacity(epochs * (n / batch));
    for e in 0..epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut derived_rng(seed, Stream::Shuffle, e as u64));
        out.extend(idx.chunks_exact(batch).map(<[usize]>::to_vec));
    }
    Ok(out)
}
