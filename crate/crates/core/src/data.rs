//! Dataset loading (IDX and CIFAR-10 binary), augmentation and batching.
//!
//! Pixels are stored as `f32` in `[0, 1]`, shape `(N, C, H, W)`.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let [n, c, _, _] = images.dims4("dataset")?;
        if n != labels.len() {
            return Err(Error::CountMismatch { images: n, labels: labels.len() });
        }
        if c != 1 && c != 3 {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: "images must have 1 or 3 channels".into(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        Ok(Dataset { images, labels, num_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    /// Keeps the first `n` samples (all of them if `n >= len`).
    pub fn truncate(self, n: usize) -> Result<Self> {
        if n >= self.len() || n == 0 {
            return Ok(self);
        }
        let images = self.images.slice_batch(0, n)?;
        let mut labels = self.labels;
        labels.truncate(n);
        Ok(Dataset { images, labels, ..self })
    }

    /// Images and labels for the given sample indices, converted to `T`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let images = self.images.gather_batch(indices)?.cast();
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Per-channel pixel mean and standard deviation.
    pub fn channel_stats(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        let mean = self.images.channel_mean()?;
        let std = self.images.channel_var()?.into_iter().map(|v| v.sqrt().max(1e-6)).collect();
        Ok((mean, std))
    }

    /// Shifts and scales each channel: `(x − mean) / std`.
    pub fn standardize(&mut self, mean: &[f32], std: &[f32]) -> Result<()> {
        let [_, c, h, w] = self.images.dims4("standardize")?;
        if mean.len() != c || std.len() != c {
            return Err(Error::ChannelMismatch { op: "standardize", expected: c, got: mean.len() });
        }
        for (i, v) in self.images.data_mut().iter_mut().enumerate() {
            let ch = (i / (h * w)) % c;
            *v = (*v - mean[ch]) / std[ch];
        }
        Ok(())
    }
}

/// Pixel scaling applied after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Bytes divided by 255.
    #[default]
    UnitRange,
    /// Unit range, then per-channel standardization with training-set stats.
    Standardize,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic { path: path.to_path_buf(), found, expected });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, count: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < header + count {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: header + count, found: bytes.len() });
    }
    Ok(&bytes[header..header + count])
}

/// Loads an IDX image/label file pair (optionally gzip-compressed).
pub fn load_idx(images_path: &Path, labels_path: &Path, num_classes: usize, name: &str) -> Result<Dataset> {
    let img = read_file(images_path)?;
    check_magic(&img, IDX_IMAGES_MAGIC, images_path)?;
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let pixels = payload(&img, 16, n * rows * cols, images_path)?;

    let lab = read_file(labels_path)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels_path)?;
    let m = be_u32(&lab, 4, labels_path)? as usize;
    if m != n {
        return Err(Error::CountMismatch { images: n, labels: m });
    }
    let labels: Vec<usize> = payload(&lab, 8, m, labels_path)?.iter().map(|&b| b as usize).collect();

    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, num_classes, name)
}

/// Writes a single-channel dataset as an uncompressed IDX pair.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [n, c, h, w] = ds.images.dims4("write_idx")?;
    if c != 1 {
        return Err(Error::ChannelMismatch { op: "write_idx", expected: 1, got: c });
    }
    let mut img = Vec::with_capacity(16 + n * h * w);
    for word in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(ds.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &ds.labels {
        lab.push(u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?);
    }
    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10(batch_files: &[PathBuf]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in batch_files {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Truncated {
                path: path.clone(),
                expected: (bytes.len() / CIFAR_RECORD + 1) * CIFAR_RECORD,
                found: bytes.len(),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(record[0] as usize);
            data.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no CIFAR-10 batch files given".into()));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10, "cifar10")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Kmnist,
    Fmnist,
    Cifar10,
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Kmnist => "kmnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    /// Augmentation is applied for the colour and clothing sets only.
    pub fn augments_by_default(self) -> bool {
        matches!(self, DatasetKind::Cifar10 | DatasetKind::Fmnist)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mnist" => DatasetKind::Mnist,
            "kmnist" => DatasetKind::Kmnist,
            "fmnist" | "fashion-mnist" => DatasetKind::Fmnist,
            "cifar10" | "cifar-10" => DatasetKind::Cifar10,
            "synthetic" => DatasetKind::Synthetic,
            other => return Err(Error::Parse(format!("unknown dataset `{other}`"))),
        })
    }
}

fn first_existing(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    for stem in stems {
        for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::io(
        format!("{}: none of {:?} found", dir.display(), stems),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

/// Directory holding a dataset's files: `<root>/<name>` if it exists, else `root`.
fn dataset_dir(root: &Path, kind: DatasetKind) -> PathBuf {
    let names: &[&str] = match kind {
        DatasetKind::Cifar10 => &["cifar10", "cifar-10-batches-bin"],
        DatasetKind::Fmnist => &["fmnist", "fashion-mnist"],
        _ => &[kind.name()],
    };
    names
        .iter()
        .map(|n| root.join(n))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.to_path_buf())
}

/// Loads the (train, test) split of an on-disk dataset below `root`.
pub fn load_split(kind: DatasetKind, root: &Path) -> Result<(Dataset, Dataset)> {
    let dir = dataset_dir(root, kind);
    match kind {
        DatasetKind::Cifar10 => {
            let train: Result<Vec<PathBuf>> = (1..=5)
                .map(|i| first_existing(&dir, &[&format!("data_batch_{i}.bin")]))
                .collect();
            let test = first_existing(&dir, &["test_batch.bin"])?;
            Ok((load_cifar10(&train?)?, load_cifar10(&[test])?))
        }
        DatasetKind::Synthetic => Err(Error::InvalidConfig("synthetic data is generated, not loaded".into())),
        _ => {
            let name = kind.name();
            let load = |split: &str| -> Result<Dataset> {
                let images = first_existing(&dir, &[&format!("{split}-images-idx3-ubyte"), &format!("{split}-images.idx3-ubyte")])?;
                let labels = first_existing(&dir, &[&format!("{split}-labels-idx1-ubyte"), &format!("{split}-labels.idx1-ubyte")])?;
                load_idx(&images, &labels, 10, name)
            };
            Ok((load("train")?, load("t10k")?))
        }
    }
}

/// Shape of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub channels: usize,
    pub size: usize,
    pub classes: usize,
}

/// Class-conditional blobs: each class has a fixed random template, and each
/// sample is its template plus noise, clipped to `[0, 1]`. Labels cycle so
/// every class is equally represented.
pub fn synthetic(spec: SyntheticSpec, seed: u64, name: &str) -> Result<Dataset> {
    let SyntheticSpec { samples, channels, size, classes } = spec;
    if classes == 0 || samples == 0 {
        return Err(Error::InvalidConfig("synthetic dataset needs samples and classes".into()));
    }
    let plane = channels * size * size;
    let mut template_rng = Rng::new(seed).derive("synthetic-templates");
    let templates: Vec<f32> = (0..classes * plane).map(|_| template_rng.uniform() as f32).collect();
    let mut noise = Rng::new(seed).derive(&format!("synthetic-noise/{name}"));
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(samples * plane);
    for &l in &labels {
        for &t in &templates[l * plane..(l + 1) * plane] {
            data.push((t + 0.25 * noise.normal() as f32).clamp(0.0, 1.0));
        }
    }
    Dataset::new(Tensor::new(vec![samples, channels, size, size], data)?, labels, classes, "synthetic")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub pad: usize,
    pub hflip_prob: f64,
    pub enabled: bool,
}

impl AugmentPolicy {
    pub fn standard() -> Self {
        AugmentPolicy { pad: 4, hflip_prob: 0.5, enabled: true }
    }

    pub fn disabled() -> Self {
        AugmentPolicy { enabled: false, ..Self::standard() }
    }

    pub fn for_dataset(kind: DatasetKind) -> Self {
        if kind.augments_by_default() {
            Self::standard()
        } else {
            Self::disabled()
        }
    }
}

/// Per-image crop offset (row, column) into the padded image, and flip flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropFlip {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

/// Zero-pad, random crop back to the original size, random horizontal flip.
pub fn augment<T: Scalar>(batch: &Tensor<T>, policy: &AugmentPolicy, rng: &mut Rng) -> Result<Tensor<T>> {
    if !policy.enabled {
        return Ok(batch.clone());
    }
    let n = batch.dims4("augment")?[0];
    let span = 2 * policy.pad + 1;
    let plan: Vec<CropFlip> = (0..n)
        .map(|_| CropFlip { dy: rng.below(span), dx: rng.below(span), flip: rng.bernoulli(policy.hflip_prob) })
        .collect();
    augment_with(batch, policy.pad, &plan)
}

/// [`augment`] with explicit per-image offsets and flips.
pub fn augment_with<T: Scalar>(batch: &Tensor<T>, pad: usize, plan: &[CropFlip]) -> Result<Tensor<T>> {
    let [n, c, h, w] = batch.dims4("augment")?;
    if plan.len() != n {
        return Err(Error::CountMismatch { images: n, labels: plan.len() });
    }
    if let Some(p) = plan.iter().find(|p| p.dy > 2 * pad || p.dx > 2 * pad) {
        return Err(Error::InvalidConfig(format!("crop offset ({}, {}) outside padding {pad}", p.dy, p.dx)));
    }
    let mut out = batch.zeros_like();
    let src = batch.data();
    let dst = out.data_mut();
    for (i, p) in plan.iter().enumerate() {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..h {
                let sy = (y + p.dy) as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let cx = if p.flip { w - 1 - x } else { x };
                    let sx = (cx + p.dx) as isize - pad as isize;
                    if sx >= 0 && sx < w as isize {
                        dst[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sample indices for one epoch, shuffled by a permutation that depends only
/// on `(seed, epoch)`. The last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let order = Rng::new(seed).derive(&format!("shuffle/{epoch}")).permutation(n);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Sequential, unshuffled batches for evaluation.
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
