//! MNIST IDX ingestion, Dirichlet label skew and batch sampling.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma};

use crate::rng::substream;
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 10;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` with integer labels in `[0, 10)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    image_shape: (usize, usize),
    by_label: Vec<Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset from flat image rows. The image shape defaults to a
    /// single row of pixels unless the width is 784 (28x28).
    pub fn new(images: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        let width = images.ncols();
        let shape = if width == 28 * 28 { (28, 28) } else { (1, width) };
        Self::with_shape(images, labels, shape)
    }

    fn with_shape(images: Array2<f64>, labels: Vec<u8>, image_shape: (usize, usize)) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: NUM_CLASSES,
            });
        }
        let mut by_label = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            by_label[l as usize].push(i);
        }
        Ok(Self {
            images,
            labels,
            image_shape,
            by_label,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> ArrayView2<'_, f64> {
        self.images.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.images.ncols()
    }

    /// Indices of samples carrying `label`.
    pub fn indices_of(&self, label: usize) -> &[usize] {
        &self.by_label[label]
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset::with_shape(
            self.images.slice(ndarray::s![..n, ..]).to_owned(),
            self.labels[..n].to_vec(),
            self.image_shape,
        )
        .expect("subset of a valid dataset")
    }

    pub fn from_batch(batch: Batch) -> Result<Dataset> {
        let labels = batch.labels.iter().map(|&l| l as u8).collect();
        Dataset::new(batch.images, labels)
    }

    /// Serializes images back to an IDX3 byte stream.
    pub fn to_idx_images(&self) -> Vec<u8> {
        let (rows, cols) = self.image_shape;
        let mut out = Vec::with_capacity(16 + self.images.len());
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&(rows as u32).to_be_bytes());
        out.extend_from_slice(&(cols as u32).to_be_bytes());
        out.extend(self.images.iter().map(|&v| (v * 255.0).round() as u8));
        out
    }

    /// Serializes labels back to an IDX1 byte stream.
    pub fn to_idx_labels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len());
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

struct IdxImages<'a> {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: &'a [u8],
}

fn parse_images(bytes: &[u8]) -> std::result::Result<IdxImages<'_>, String> {
    let magic = be_u32(bytes, 0).ok_or("file too short for an IDX header")?;
    if magic != IMAGE_MAGIC {
        return Err(format!(
            "expected image magic {IMAGE_MAGIC:#010x}, found {magic:#010x}"
        ));
    }
    let header = |i: usize| be_u32(bytes, 4 + 4 * i).map(|v| v as usize);
    let (count, rows, cols) = match (header(0), header(1), header(2)) {
        (Some(c), Some(r), Some(k)) => (c, r, k),
        _ => return Err("truncated image header".into()),
    };
    let needed = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() < needed {
        return Err(format!(
            "header promises {count}x{rows}x{cols} = {needed} pixel bytes, file holds {}",
            pixels.len()
        ));
    }
    if pixels.len() > needed {
        return Err(format!(
            "{} trailing bytes after {needed} pixel bytes",
            pixels.len() - needed
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

fn parse_labels(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    let magic = be_u32(bytes, 0).ok_or("file too short for an IDX header")?;
    if magic != LABEL_MAGIC {
        return Err(format!(
            "expected label magic {LABEL_MAGIC:#010x}, found {magic:#010x}"
        ));
    }
    let count = be_u32(bytes, 4).ok_or("truncated label header")? as usize;
    let labels = &bytes[8..];
    if labels.len() != count {
        return Err(format!(
            "header promises {count} labels, file holds {}",
            labels.len()
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(format!("label {bad} outside [0, {NUM_CLASSES})"));
    }
    Ok(labels)
}

/// Loads an IDX image/label pair. Files ending in `.gz` are decompressed.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    load_idx_limited(images_path, labels_path, None)
}

/// Like [`load_idx`], keeping only the first `limit` samples.
pub fn load_idx_limited(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset> {
    let image_bytes = read_bytes(images_path)?;
    let label_bytes = read_bytes(labels_path)?;
    let images = parse_images(&image_bytes).map_err(|reason| Error::Idx {
        path: images_path.to_path_buf(),
        reason,
    })?;
    let labels = parse_labels(&label_bytes).map_err(|reason| Error::Idx {
        path: labels_path.to_path_buf(),
        reason,
    })?;
    if labels.len() != images.count {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            reason: format!(
                "{} labels do not match {} images in {}",
                labels.len(),
                images.count,
                images_path.display()
            ),
        });
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    let width = images.rows * images.cols;
    let pixels = images.pixels[..n * width]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let matrix = Array2::from_shape_vec((n, width), pixels).expect("exact pixel count");
    Dataset::with_shape(matrix, labels[..n].to_vec(), (images.rows, images.cols))
}

/// Per-node label probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDistribution {
    pub probs: Vec<f64>,
}

impl NodeDistribution {
    pub fn uniform(n_labels: usize) -> Self {
        Self {
            probs: vec![1.0 / n_labels as f64; n_labels],
        }
    }

    pub fn one_hot(n_labels: usize, label: usize) -> Self {
        let mut probs = vec![0.0; n_labels];
        probs[label] = 1.0;
        Self { probs }
    }
}

/// Draws one label distribution per node from a symmetric Dirichlet(alpha)
/// by normalizing Gamma(alpha, 1) draws. Node `i` uses its own substream, so
/// its distribution does not depend on `n_nodes`.
pub fn dirichlet_partition(
    alpha: f64,
    n_nodes: usize,
    n_labels: usize,
    seed: u64,
) -> Result<Vec<NodeDistribution>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "Dirichlet concentration must be positive and finite, got {alpha}"
        )));
    }
    if n_labels == 0 {
        return Err(Error::Config("need at least one label".into()));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..n_nodes)
        .map(|node| {
            let mut rng = substream(seed, node as u64, "dirichlet");
            let draws: Vec<f64> = (0..n_labels).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                NodeDistribution {
                    probs: draws.iter().map(|d| d / total).collect(),
                }
            } else {
                // every draw underflowed: the alpha -> 0 limit is a point mass
                NodeDistribution::one_hot(n_labels, rng.random_range(0..n_labels))
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelMode {
    Iid,
    Skewed(NodeDistribution),
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Samples a batch with replacement. In skewed mode each sample's label is
/// drawn from the node distribution (renormalized over labels present in the
/// dataset), then an example of that label is picked uniformly.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    mode: &LabelMode,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset to sample from".into()));
    }
    let indices: Vec<usize> = match mode {
        LabelMode::Iid => (0..batch_size)
            .map(|_| rng.random_range(0..dataset.len()))
            .collect(),
        LabelMode::Skewed(dist) => {
            let weights: Vec<f64> = (0..NUM_CLASSES)
                .map(|label| {
                    let p = dist.probs.get(label).copied().unwrap_or(0.0);
                    if dataset.indices_of(label).is_empty() {
                        0.0
                    } else {
                        p
                    }
                })
                .collect();
            let chooser = WeightedIndex::new(&weights).map_err(|_| {
                Error::Config(
                    "label distribution puts no mass on labels present in the dataset".into(),
                )
            })?;
            (0..batch_size)
                .map(|_| {
                    let pool = dataset.indices_of(chooser.sample(rng));
                    pool[rng.random_range(0..pool.len())]
                })
                .collect()
        }
    };
    let images = dataset.images.select(ndarray::Axis(0), &indices);
    let labels = indices.iter().map(|&i| dataset.labels[i] as usize).collect();
    Ok(Batch { images, labels })
}
