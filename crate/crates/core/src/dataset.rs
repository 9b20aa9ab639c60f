//! Loaders for the MNIST / Fashion-MNIST IDX format and CIFAR-10 binary batches.
//!
//! All loaders scale raw bytes by 1/255 and perform no further
//! standardization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const NUM_CLASSES: usize = 10;

/// Dense pixel grid, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Param(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Param(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Builds an image from raw bytes, scaling each by 1/255.
    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Channel values of the pixel at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.pixels[start..start + self.channels]
    }

    /// Inverse of [`Image::from_bytes`] (rounds to the nearest byte).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    /// Luminance in `[0, 1]`; identity for grayscale images.
    pub fn gray(&self, row: usize, col: usize) -> f64 {
        let p = self.pixel(row, col);
        match p {
            [g] => *g,
            [r, g, b] => 0.299 * r + 0.587 * g + 0.114 * b,
            _ => unreachable!("channel count validated at construction"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub name: String,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Corrupt(format!("label {l} outside [0, {NUM_CLASSES})")));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Items `range`, cloned into a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        Self {
            name: self.name.clone(),
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            found: bytes.len(),
        })
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "expected IDX image magic {IDX_IMAGE_MAGIC}, found {magic}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let item = rows * cols;
    let expected = 16 + count * item;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    bytes[16..expected]
        .chunks_exact(item.max(1))
        .take(count)
        .map(|chunk| Image::from_bytes(rows, cols, 1, &chunk[..item]))
        .collect()
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "expected IDX label magic {IDX_LABEL_MAGIC}, found {magic}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    bytes[8..expected]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if usize::from(b) < NUM_CLASSES {
                Ok(usize::from(b))
            } else {
                Err(Error::Corrupt(format!(
                    "label {b} at item {i} outside [0, {NUM_CLASSES})"
                )))
            }
        })
        .collect()
}

/// Serializes grayscale images of equal size as an IDX image file.
pub fn encode_idx_images(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((0, 0), |im| (im.height(), im.width()));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        if im.channels() != 1 || im.height() != rows || im.width() != cols {
            return Err(Error::Shape("IDX images must be grayscale and equally sized".into()));
        }
        out.extend(im.to_bytes());
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::Corrupt(format!("label {l} not a byte")))?;
        out.push(b);
    }
    Ok(out)
}

pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map_or_else(|| "cifar10".to_string(), |s| s.to_string_lossy().into_owned());
    parse_cifar10_batch(&read_file(path)?, name)
}

/// Parses 3073-byte records (label byte, then planar R, G, B 32×32 planes)
/// into channel-interleaved images.
pub fn parse_cifar10_batch(bytes: &[u8], name: impl Into<String>) -> Result<LabeledDataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    const PLANE: usize = 32 * 32;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut labels = Vec::with_capacity(images.capacity());
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(usize::from(record[0]));
        let planes = &record[1..];
        let mut interleaved = Vec::with_capacity(3 * PLANE);
        for p in 0..PLANE {
            for c in 0..3 {
                interleaved.push(planes[c * PLANE + p]);
            }
        }
        images.push(Image::from_bytes(32, 32, 3, &interleaved)?);
    }
    LabeledDataset::new(name, images, labels)
}

pub fn encode_cifar10_batch(data: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_LEN);
    for (im, label) in data.iter() {
        if im.height() != 32 || im.width() != 32 || im.channels() != 3 {
            return Err(Error::Shape("CIFAR-10 records are 32x32x3".into()));
        }
        out.push(label as u8);
        let bytes = im.to_bytes();
        for c in 0..3 {
            out.extend(bytes.iter().skip(c).step_by(3));
        }
    }
    Ok(out)
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// Conventional sub-directory of the data root holding this dataset.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion" | "fashion-mnist" => Ok(DatasetKind::Fashion),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Param(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Train / validation / test partition of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Number of training-file items kept for training; the rest become validation.
pub const TRAIN_SPLIT: usize = 50_000;

/// Loads all three splits. For the IDX datasets the first 50,000 items of
/// the training file train and the remainder validate; CIFAR-10 uses
/// batches 1-5 for training, with batch 5 held out when present.
pub fn load_splits(kind: DatasetKind, data_root: impl AsRef<Path>) -> Result<Splits> {
    let dir = data_root.as_ref().join(kind.subdir());
    match kind {
        DatasetKind::Mnist | DatasetKind::Fashion => {
            let train_file = load_idx_pair(&dir, "train", kind.name())?;
            let test = load_idx_pair(&dir, "t10k", kind.name())?;
            let split = TRAIN_SPLIT.min(train_file.len());
            Ok(Splits {
                train: train_file.slice(0..split),
                val: train_file.slice(split..train_file.len()),
                test,
            })
        }
        DatasetKind::Cifar10 => {
            let mut batches = Vec::new();
            for i in 1..=5 {
                let p = dir.join(format!("data_batch_{i}.bin"));
                if p.exists() {
                    batches.push(load_cifar10_batch(&p)?);
                }
            }
            if batches.is_empty() {
                return Err(Error::io(
                    dir.join("data_batch_1.bin"),
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                ));
            }
            let val = if batches.len() > 1 {
                batches.pop().unwrap_or_default()
            } else {
                LabeledDataset::default()
            };
            let mut train = LabeledDataset {
                name: kind.name().into(),
                ..Default::default()
            };
            for b in batches {
                train.images.extend(b.images);
                train.labels.extend(b.labels);
            }
            let test = load_cifar10_batch(dir.join("test_batch.bin"))?;
            Ok(Splits { train, val, test })
        }
    }
}

fn load_idx_pair(dir: &Path, prefix: &str, name: &str) -> Result<LabeledDataset> {
    let find = |kind: &str| -> PathBuf {
        let plain = dir.join(format!(
            "{prefix}-{kind}-idx{}-ubyte",
            if kind == "images" { 3 } else { 1 }
        ));
        if plain.exists() {
            plain
        } else {
            dir.join(format!(
                "{prefix}-{kind}.idx{}-ubyte",
                if kind == "images" { 3 } else { 1 }
            ))
        }
    };
    let images = load_idx_images(find("images"))?;
    let labels = load_idx_labels(find("labels"))?;
    LabeledDataset::new(name, images, labels)
}
