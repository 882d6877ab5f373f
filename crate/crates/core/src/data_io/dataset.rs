use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::rng::{normals, permutation, SeedTree};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labeled examples with every feature in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(examples: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if examples.rank() != 2 || examples.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: examples.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if examples.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTensor("dataset values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            examples,
            labels,
            num_classes,
            split,
        })
    }

    pub fn examples(&self) -> &Tensor {
        &self.examples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.cols()
    }

    /// First `n` examples (all of them if `n` is 0 or too large).
    pub fn head(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            examples: self.examples.select_rows(&idx),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    /// Isotropic Gaussian clusters on a circle inside the unit square.
    Blobs,
    /// Two interleaved half circles (two classes only).
    Moons,
    /// Gaussian clusters at the cells of a square grid.
    Grid,
}

impl FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "blobs" => Ok(ToyKind::Blobs),
            "moons" => Ok(ToyKind::Moons),
            "grid" => Ok(ToyKind::Grid),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::Blobs => "blobs",
            ToyKind::Moons => "moons",
            ToyKind::Grid => "grid",
        })
    }
}

/// Radius of the blob circle after mapping the unit circle into `[0,1]^2`
/// by `c -> 0.5 + BLOB_RADIUS * c`.
pub const BLOB_RADIUS: f64 = 0.3;

pub fn blob_center(class: usize, num_classes: usize) -> [f64; 2] {
    let angle = 2.0 * PI * class as f64 / num_classes as f64;
    [0.5 + BLOB_RADIUS * angle.cos(), 0.5 + BLOB_RADIUS * angle.sin()]
}

/// Class-balanced 2-d toy data, shuffled, deterministic from `seed`.
pub fn make_toy_dataset(kind: ToyKind, num: usize, num_classes: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || num == 0 || !num.is_multiple_of(num_classes) {
        return Err(Error::Config(format!(
            "{num} examples cannot be split evenly over {num_classes} classes"
        )));
    }
    if kind == ToyKind::Moons && num_classes != 2 {
        return Err(Error::Config("moons has exactly 2 classes".into()));
    }
    if noise_scale < 0.0 {
        return Err(Error::Config("noise_scale must be non-negative".into()));
    }
    let tree = SeedTree::new(seed);
    let per_class = num / num_classes;
    let mut noise_rng = tree.stream("toy_noise", 0);
    let noise = normals(&mut noise_rng, 2 * num);
    let mut position_rng = tree.stream("toy_position", 0);
    let grid_side = (num_classes as f64).sqrt().ceil() as usize;

    let mut points = Vec::with_capacity(num);
    let mut labels = Vec::with_capacity(num);
    for class in 0..num_classes {
        for _ in 0..per_class {
            let base = match kind {
                ToyKind::Blobs => blob_center(class, num_classes),
                ToyKind::Grid => {
                    let (cx, cy) = (class % grid_side, class / grid_side);
                    let side = grid_side as f64;
                    [(cx as f64 + 0.5) / side, (cy as f64 + 0.5) / side]
                }
                ToyKind::Moons => {
                    use rand::Rng;
                    let t = position_rng.random_range(0.0..PI);
                    let (x, y) = if class == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    // moons span [-1, 2] x [-0.5, 1]
                    [(x + 1.0) / 3.0, (y + 0.5) / 1.5]
                }
            };
            let i = points.len();
            points.push([
                (base[0] + noise_scale * noise[2 * i]).clamp(0.0, 1.0),
                (base[1] + noise_scale * noise[2 * i + 1]).clamp(0.0, 1.0),
            ]);
            labels.push(class);
        }
    }
    let order = permutation(&mut tree.stream("toy_order", 0), num);
    let mut data = Vec::with_capacity(2 * num);
    let mut shuffled = Vec::with_capacity(num);
    for &i in &order {
        data.extend_from_slice(&points[i]);
        shuffled.push(labels[i]);
    }
    Dataset::new(Tensor::new(vec![num, 2], data)?, shuffled, num_classes, Split::Train)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair (MNIST layout). Pixels are scaled by
/// 1/255; the class count is one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let truncated = |path: &Path, found: usize, expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        found,
        expected,
    };
    if images.len() < 16 {
        return Err(truncated(images_path, images.len(), 16));
    }
    let magic = read_u32(&images, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    if labels.len() < 8 {
        return Err(truncated(labels_path, labels.len(), 8));
    }
    let magic = read_u32(&labels, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::WrongMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n_images = read_u32(&images, 4) as usize;
    let rows = read_u32(&images, 8) as usize;
    let cols = read_u32(&images, 12) as usize;
    let n_labels = read_u32(&labels, 4) as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let expected = 16 + n_images * dim;
    if images.len() < expected {
        return Err(truncated(images_path, images.len(), expected));
    }
    if labels.len() < 8 + n_labels {
        return Err(truncated(labels_path, labels.len(), 8 + n_labels));
    }
    if n_images == 0 || dim == 0 {
        return Err(Error::EmptyBatch);
    }
    let data: Vec<f64> = images[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    let label_vec: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let num_classes = label_vec.iter().max().map_or(1, |m| m + 1).max(2);
    Dataset::new(
        Tensor::new(vec![n_images, dim], data)?,
        label_vec,
        num_classes,
        Split::Train,
    )
}

/// Writes a dataset as an IDX pair, quantising values to `round(v * 255)`.
/// `rows * cols` must equal the example width.
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::Config(format!(
            "{rows}x{cols} images do not match width {}",
            dataset.dim()
        )));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.examples().numel());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend(dataset.examples().data().iter().map(|&v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for &l in dataset.labels() {
        let byte = u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
            label: l,
            num_classes: 256,
        })?;
        labels.push(byte);
    }
    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced() {
        let d = make_toy_dataset(ToyKind::Blobs, 300, 3, 0.05, 1).unwrap();
        assert_eq!(d.class_counts(), vec![100, 100, 100]);
        assert!(d.examples().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_noise_collapses_to_centers() {
        let d = make_toy_dataset(ToyKind::Blobs, 30, 3, 0.0, 2).unwrap();
        for (row, &l) in d.examples().row_iter().zip(d.labels()) {
            let c = blob_center(l, 3);
            assert_eq!(row, &c[..]);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_toy_dataset(ToyKind::Grid, 40, 4, 0.05, 3).unwrap();
        let b = make_toy_dataset(ToyKind::Grid, 40, 4, 0.05, 3).unwrap();
        let c = make_toy_dataset(ToyKind::Grid, 40, 4, 0.05, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_inputs() {
        assert!(make_toy_dataset(ToyKind::Blobs, 301, 3, 0.05, 1).is_err());
        assert!(make_toy_dataset(ToyKind::Moons, 30, 3, 0.05, 1).is_err());
        assert!(matches!("spiral".parse::<ToyKind>(), Err(Error::InvalidKind(_))));
        let moons = make_toy_dataset(ToyKind::Moons, 20, 2, 0.02, 1).unwrap();
        assert_eq!(moons.class_counts(), vec![10, 10]);
    }
}
