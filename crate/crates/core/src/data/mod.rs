//! Datasets, MNIST ingestion, normalization maps and model files.

mod idx;
mod persist;

pub use idx::{
    load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, write_idx_images,
    write_idx_labels, IdxImages, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use persist::{
    atomic_write, load_model, model_from_str, model_to_string, save_model, FORMAT_VERSION,
};

use std::path::Path;

use crate::error::{PsbcError, Result};
use crate::propagation::Sample;

/// Feature vectors in `[0, 1]^n_u`, stored row-major, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_u: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(n_u: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if n_u == 0 {
            return Err(PsbcError::Domain(
                "datasets need at least one feature".into(),
            ));
        }
        if features.len() != n_u * labels.len() {
            return Err(PsbcError::dim(
                "dataset features",
                n_u * labels.len(),
                features.len(),
            ));
        }
        if let Some(i) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(PsbcError::Domain(format!(
                "sample {} feature {} is {}, outside [0, 1]",
                i / n_u,
                i % n_u,
                features[i]
            )));
        }
        Ok(Dataset {
            n_u,
            features,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let n_u = rows.first().map_or(1, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_u) {
            return Err(PsbcError::dim("dataset row", n_u, r.len()));
        }
        Self::new(n_u, rows.concat(), labels)
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_u..(i + 1) * self.n_u]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_u)
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        self.features().zip(self.labels.iter().copied()).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_u);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Dataset {
            n_u: self.n_u,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            n_u: self.n_u,
            features: self.features[..n * self.n_u].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Global min-max scaling of bytes: `b / 255`.
pub fn scale_minmax(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| f64::from(b) / 255.0).collect()
}

fn pair_label(label: u8, a: u8, b: u8) -> Option<u8> {
    if label == a.min(b) {
        Some(0)
    } else if label == a.max(b) {
        Some(1)
    } else {
        None
    }
}

fn check_pair(a: u8, b: u8) -> Result<()> {
    if a == b || a > 9 || b > 9 {
        return Err(PsbcError::Domain(format!("invalid digit pair ({a}, {b})")));
    }
    Ok(())
}

/// Keeps digits `a` and `b`; the smaller one gets label 0, the other 1.
pub fn select_pair(ds: &Dataset, a: u8, b: u8) -> Result<Dataset> {
    check_pair(a, b)?;
    let (idx, labels): (Vec<usize>, Vec<u8>) = ds
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| pair_label(l, a, b).map(|y| (i, y)))
        .unzip();
    let mut out = ds.subset(&idx);
    out.labels = labels;
    Ok(out)
}

/// A digit set kept as raw bytes; rows are scaled only when selected.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSet {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl DigitSet {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(PsbcError::dim("label count", images.count, labels.len()));
        }
        Ok(DigitSet { images, labels })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::new(load_idx_images(images)?, load_idx_labels(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// All rows scaled to `[0, 1]`, labels kept as digits.
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            n_u: self.images.pixels_per_image(),
            features: scale_minmax(&self.images.pixels),
            labels: self.labels.clone(),
        }
    }

    /// Same as [`select_pair`] on [`DigitSet::to_dataset`], without scaling
    /// the other digits.
    pub fn select_pair(&self, a: u8, b: u8) -> Result<Dataset> {
        check_pair(a, b)?;
        let n_u = self.images.pixels_per_image();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(y) = pair_label(l, a, b) {
                features.extend(scale_minmax(self.images.image(i)));
                labels.push(y);
            }
        }
        Ok(Dataset {
            n_u,
            features,
            labels,
        })
    }
}

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// The 60,000 train-development records and the 10,000 test records.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train_dev: DigitSet,
    pub test: DigitSet,
}

/// Reads the four uncompressed MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    Ok(Mnist {
        train_dev: DigitSet::load(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?,
        test: DigitSet::load(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))?,
    })
}

/// One digit pair, normalized with a map fit on its training records.
#[derive(Debug, Clone)]
pub struct PairData {
    pub train: Dataset,
    pub test: Dataset,
    pub map: NormalizationMap,
}

/// Selects `(a, b)` from both splits, keeps at most `limit` leading training
/// records, and normalizes both splits with the training mean.
pub fn prepare_pair(mnist: &Mnist, a: u8, b: u8, limit: Option<usize>) -> Result<PairData> {
    let mut train = mnist.train_dev.select_pair(a, b)?;
    if let Some(n) = limit {
        train = train.head(n);
    }
    let map = fit_normalization(&train)?;
    Ok(PairData {
        train: map.apply_dataset(&train)?,
        test: map.apply_dataset(&mnist.test.select_pair(a, b)?)?,
        map,
    })
}

/// `N(x) = 1/2 + (x - mu) / 2`, fit on training features of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationMap {
    pub mu: Vec<f64>,
}

impl NormalizationMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mu.len() {
            return Err(PsbcError::dim(
                "normalization input",
                self.mu.len(),
                x.len(),
            ));
        }
        Ok(x.iter()
            .zip(&self.mu)
            .map(|(v, m)| 0.5 + 0.5 * (v - m))
            .collect())
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_u != self.mu.len() {
            return Err(PsbcError::dim("normalization input", self.mu.len(), ds.n_u));
        }
        let mut features = Vec::with_capacity(ds.features.len());
        for x in ds.features() {
            features.extend(x.iter().zip(&self.mu).map(|(v, m)| 0.5 + 0.5 * (v - m)));
        }
        Ok(Dataset {
            n_u: ds.n_u,
            features,
            labels: ds.labels.clone(),
        })
    }
}

pub fn fit_normalization(train: &Dataset) -> Result<NormalizationMap> {
    if train.is_empty() {
        return Err(PsbcError::Domain(
            "cannot fit a normalization map on no data".into(),
        ));
    }
    let mut mu = vec![0.0; train.n_u];
    for x in train.features() {
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v;
        }
    }
    let n = train.len() as f64;
    // a mean of values in [0, 1] can round just past 1
    mu.iter_mut().for_each(|m| *m = (*m / n).clamp(0.0, 1.0));
    Ok(NormalizationMap { mu })
}

pub fn apply_normalization(map: &NormalizationMap, x: &[f64]) -> Result<Vec<f64>> {
    map.apply(x)
}
