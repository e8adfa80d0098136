//! Datasets: Gaussian-blob generator, IDX (MNIST) reader/writer and equal
//! partitioning across edge devices.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Isotropic standard deviation of each synthetic class blob.
pub const BLOB_SPREAD: f64 = 0.15;

/// Features in `[0, 1]`, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Validation("class_count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Validation(format!("label {bad} not below class_count {class_count}")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Same rows with replacement labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<LabeledDataset> {
        LabeledDataset::new(self.features.clone(), labels, self.class_count)
    }

    /// Widens the label space, e.g. when a split happens to miss the top class.
    pub fn with_class_count(self, class_count: usize) -> Result<LabeledDataset> {
        LabeledDataset::new(self.features, self.labels, class_count)
    }
}

/// Class centres for the synthetic task; sampling several splits from one
/// generator keeps train and auxiliary sets on the same blobs.
#[derive(Debug, Clone)]
pub struct BlobGenerator {
    centers: Array2<f64>,
    spread: f64,
}

impl BlobGenerator {
    pub fn new(class_count: usize, dim: usize, seed: u64) -> Result<Self> {
        if class_count == 0 || dim == 0 {
            return Err(Error::Validation(format!(
                "blob generator needs positive class_count and dim, got {class_count} and {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tags::BLOB_CENTERS]));
        let centers = Array2::from_shape_fn((class_count, dim), |_| rng.random_range(0.0..1.0));
        Ok(BlobGenerator {
            centers,
            spread: BLOB_SPREAD,
        })
    }

    pub fn class_count(&self) -> usize {
        self.centers.nrows()
    }

    /// `per_class` points per class, interleaved so row `i` has label `i % class_count`.
    pub fn sample(&self, per_class: usize, seed: u64) -> Result<LabeledDataset> {
        if per_class == 0 {
            return Err(Error::Validation("per_class must be positive".into()));
        }
        let (classes, dim) = self.centers.dim();
        let n = classes * per_class;
        let noise = Normal::new(0.0, self.spread).expect("positive spread");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for (i, mut row) in features.rows_mut().into_iter().enumerate() {
            let c = i % classes;
            for (j, v) in row.iter_mut().enumerate() {
                *v = (self.centers[[c, j]] + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            labels.push(c);
        }
        LabeledDataset::new(features, labels, classes)
    }
}

/// Gaussian blobs around seeded centres in `[0,1]^dim`, clipped to the cube.
pub fn generate_synthetic(class_count: usize, dim: usize, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    BlobGenerator::new(class_count, dim, seed)?.sample(per_class, seed::derive(seed, &[seed::tags::BLOB_SAMPLES]))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses an IDX header; returns the dimension sizes and the payload.
fn parse_idx<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(format_err(path, "file shorter than the IDX magic"));
    }
    let found = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(format_err(path, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(format_err(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!("payload holds {} bytes, header declares {expected}", payload.len()),
        ));
    }
    Ok((dims, payload))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixels are scaled by 1/255; the class count is `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (image_dims, pixels) = parse_idx(&image_bytes, images_path, IDX_IMAGES_MAGIC)?;
    let (label_dims, raw_labels) = parse_idx(&label_bytes, labels_path, IDX_LABELS_MAGIC)?;
    if image_dims[0] != label_dims[0] {
        return Err(Error::Consistency(format!(
            "{} declares {} images but {} declares {} labels",
            images_path.display(),
            image_dims[0],
            labels_path.display(),
            label_dims[0]
        )));
    }
    let n = image_dims[0];
    let dim: usize = image_dims[1..].iter().product();
    let features = Array2::from_shape_vec((n, dim), pixels.iter().map(|&b| f64::from(b) / 255.0).collect())
        .expect("payload length checked");
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(features, labels, class_count)
}

/// Writes `dataset` as a pair of IDX files with images shaped `n x 1 x dim`.
/// Features are quantised to the nearest multiple of 1/255.
pub fn write_idx(dataset: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.features.len());
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, 1, dataset.dim() as u32] {
        images.extend(d.to_be_bytes());
    }
    images.extend(dataset.features.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend(n.to_be_bytes());
    for &y in &dataset.labels {
        let byte = u8::try_from(y).map_err(|_| Error::Validation(format!("label {y} does not fit a byte")))?;
        labels.push(byte);
    }
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))
}

/// One index list per edge device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

/// Seeded shuffle of `0..n`, then round-robin dealing to `ed_count` shards.
pub fn partition_equal(dataset: &LabeledDataset, ed_count: usize, seed: u64) -> Result<Partition> {
    if ed_count == 0 {
        return Err(Error::Validation("ed_count must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut shards = vec![Vec::with_capacity(dataset.len() / ed_count + 1); ed_count];
    for (pos, idx) in order.into_iter().enumerate() {
        shards[pos % ed_count].push(idx);
    }
    Ok(Partition { shards })
}
