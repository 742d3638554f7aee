//! Model aggregation: plain mean, sample-weighted FedAvg, old/new blending,
//! random sparsification with a coverage-aware merge, and variance-corrected
//! averaging.
//!
//! Variance-corrected averaging computes the plain mean of the buffer and
//! then, layer by layer, applies the affine map
//!
//! ```text
//! v <- (v - mean(avg)) * sigma_target / sigma_avg + mean(avg)
//! ```
//!
//! to the weight matrix, where `sigma_target^2` is the mean of the input
//! models' layer variances. Biases are averaged but never rescaled.

use std::borrow::Borrow;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::weight_variance;
use crate::nn::{LayerSpec, ModelWeights};
use crate::{Error, Result};

/// Layers whose averaged standard deviation falls below this are left alone.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Plain,
    VarianceCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AveragingConfig {
    pub strategy: Strategy,
    /// Share of the node's own model kept when blending in the average.
    pub beta: f64,
    /// Fraction of each layer's parameters transmitted; 1 disables compression.
    pub compression_ratio: f64,
    pub fedavg_weighted: bool,
    /// Rescale again after blending (only meaningful with variance correction).
    pub post_blend_correction: bool,
}

impl Default for AveragingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Plain,
            beta: 0.5,
            compression_ratio: 1.0,
            fedavg_weighted: false,
            post_blend_correction: false,
        }
    }
}

impl AveragingConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        check_ratio(self.compression_ratio)
    }

    pub fn compresses(&self) -> bool {
        self.compression_ratio < 1.0
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must be in [0, 1], got {beta}")))
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "compression ratio must be in (0, 1], got {ratio}"
        )))
    }
}

fn check_same_arch<M: Borrow<ModelWeights>>(models: &[M]) -> Result<&ModelWeights> {
    let first = models
        .first()
        .ok_or_else(|| Error::Empty("model buffer".into()))?
        .borrow();
    for m in &models[1..] {
        first.ensure_compatible(m.borrow())?;
    }
    Ok(first)
}

/// Element-wise arithmetic mean of every weight and bias.
pub fn plain_average<M: Borrow<ModelWeights>>(models: &[M]) -> Result<ModelWeights> {
    let first = check_same_arch(models)?;
    let mut acc = first.clone();
    for m in &models[1..] {
        acc.add_scaled(1.0, m.borrow());
    }
    let n = models.len() as f64;
    for layer in &mut acc.layers {
        layer.weights /= n;
        layer.bias /= n;
    }
    Ok(acc)
}

/// FedAvg: `sum_k (n_k / sum n) * w_k`.
pub fn weighted_fedavg<M: Borrow<ModelWeights>>(models: &[M], counts: &[u64]) -> Result<ModelWeights> {
    let first = check_same_arch(models)?;
    if counts.len() != models.len() {
        return Err(Error::Shape(format!(
            "{} sample counts for {} models",
            counts.len(),
            models.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("sample counts sum to zero".into()));
    }
    if counts.iter().all(|&c| c == counts[0]) {
        return plain_average(models);
    }
    let mut acc = first.clone();
    acc.scale(0.0);
    for (m, &c) in models.iter().zip(counts) {
        if c > 0 {
            acc.add_scaled(c as f64 / total as f64, m.borrow());
        }
    }
    Ok(acc)
}

/// `beta * old + (1 - beta) * avg`, element-wise.
pub fn blend(old: &ModelWeights, avg: &ModelWeights, beta: f64) -> Result<ModelWeights> {
    check_beta(beta)?;
    old.ensure_compatible(avg)?;
    let mut out = old.clone();
    for (o, a) in out.layers.iter_mut().zip(&avg.layers) {
        o.weights.zip_mut_with(&a.weights, |x, &y| *x = beta * *x + (1.0 - beta) * y);
        o.bias.zip_mut_with(&a.bias, |x, &y| *x = beta * *x + (1.0 - beta) * y);
    }
    Ok(out)
}

/// Per-layer targets for variance correction: the mean of the inputs' layer
/// weight variances.
pub fn mean_layer_variances<M: Borrow<ModelWeights>>(models: &[M]) -> Result<Vec<f64>> {
    let first = check_same_arch(models)?;
    let n = models.len() as f64;
    (0..first.layers.len())
        .map(|l| {
            let layer = &first.layers[l];
            if layer.weights.len() < 2 {
                return Err(Error::Config(format!(
                    "layer `{}` has fewer than two weights; its variance is undefined",
                    layer.spec.name
                )));
            }
            Ok(models
                .iter()
                .map(|m| weight_variance(&m.borrow().layers[l]))
                .sum::<f64>()
                / n)
        })
        .collect()
}

/// Rescales each layer's weight matrix about its mean so its variance equals
/// `targets[l]`. Returns the names of layers skipped as degenerate.
pub fn rescale_to_variance(model: &mut ModelWeights, targets: &[Option<f64>]) -> Vec<String> {
    let mut skipped = Vec::new();
    for (layer, target) in model.layers.iter_mut().zip(targets) {
        let Some(target) = *target else { continue };
        let n = layer.weights.len() as f64;
        let mean = layer.weights.sum() / n;
        let var = layer.weights.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < DEGENERATE_STD {
            log::warn!(
                "layer `{}` averaged to a near-constant matrix (std {std:e}); skipping variance correction",
                layer.spec.name
            );
            skipped.push(layer.spec.name.clone());
            continue;
        }
        let factor = target.sqrt() / std;
        layer.weights.mapv_inplace(|v| (v - mean) * factor + mean);
    }
    skipped
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrected {
    pub model: ModelWeights,
    /// Layers left unscaled because the average was (near) constant.
    pub skipped: Vec<String>,
}

/// Plain average followed by the per-layer variance rescale.
pub fn variance_corrected_average<M: Borrow<ModelWeights>>(models: &[M]) -> Result<Corrected> {
    let targets = mean_layer_variances(models)?;
    let mut model = plain_average(models)?;
    let targets: Vec<Option<f64>> = targets.into_iter().map(Some).collect();
    let skipped = rescale_to_variance(&mut model, &targets);
    Ok(Corrected { model, skipped })
}

/// A partial model: for each layer, the transmitted `(flat index, value)`
/// pairs over the layer's weights (row-major) followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseModel {
    pub architecture: Vec<LayerSpec>,
    pub layers: Vec<Vec<(usize, f64)>>,
}

impl SparseModel {
    pub fn from_dense(model: &ModelWeights) -> SparseModel {
        SparseModel {
            architecture: model.architecture(),
            layers: model
                .layers
                .iter()
                .map(|l| (0..l.num_params()).map(|i| (i, l.param(i))).collect())
                .collect(),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Variance of the transmitted weight-matrix entries of layer `l`, if at
    /// least two were sent.
    fn weight_sample_variance(&self, l: usize) -> Option<f64> {
        let spec = &self.architecture[l];
        let n_weights = spec.n_in * spec.n_out;
        let values: Vec<f64> = self.layers[l]
            .iter()
            .filter(|(i, _)| *i < n_weights)
            .map(|&(_, v)| v)
            .collect();
        if values.len() < 2 {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        Some(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
    }
}

/// Keeps `round(ratio * count)` (at least one) distinct, uniformly chosen
/// parameters of every layer.
pub fn compress_sample<R: Rng + ?Sized>(
    model: &ModelWeights,
    ratio: f64,
    rng: &mut R,
) -> Result<SparseModel> {
    check_ratio(ratio)?;
    let layers = model
        .layers
        .iter()
        .map(|layer| {
            let count = layer.num_params();
            let keep = ((ratio * count as f64).round() as usize).clamp(1, count);
            let mut idx = if keep == count {
                (0..count).collect()
            } else {
                rand::seq::index::sample(rng, count, keep).into_vec()
            };
            idx.sort_unstable();
            idx.into_iter().map(|i| (i, layer.param(i))).collect()
        })
        .collect();
    Ok(SparseModel {
        architecture: model.architecture(),
        layers,
    })
}

/// Per coordinate, the mean over the models that transmitted it; untouched
/// coordinates keep the value from `base`.
pub fn merge_sparse(models: &[SparseModel], base: &ModelWeights) -> Result<ModelWeights> {
    let arch = base.architecture();
    let mut sums: Vec<Vec<f64>> = base.layers.iter().map(|l| vec![0.0; l.num_params()]).collect();
    let mut counts: Vec<Vec<u32>> = base.layers.iter().map(|l| vec![0; l.num_params()]).collect();
    for sparse in models {
        if sparse.architecture != arch {
            return Err(Error::Architecture(
                "sparse payload does not match the receiver's architecture".into(),
            ));
        }
        for (l, entries) in sparse.layers.iter().enumerate() {
            let len = sums[l].len();
            for &(i, v) in entries {
                if i >= len {
                    return Err(Error::SparseIndex {
                        layer: arch[l].name.clone(),
                        index: i,
                        len,
                    });
                }
                sums[l][i] += v;
                counts[l][i] += 1;
            }
        }
    }
    let mut out = base.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (i, (&s, &c)) in sums[l].iter().zip(&counts[l]).enumerate() {
            if c > 0 {
                *layer.param_mut(i) = s / c as f64;
            }
        }
    }
    Ok(out)
}

/// What a node received from a peer.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dense(Arc<ModelWeights>),
    Sparse(Arc<SparseModel>),
}

impl Payload {
    fn architecture(&self) -> Vec<LayerSpec> {
        match self {
            Payload::Dense(m) => m.architecture(),
            Payload::Sparse(s) => s.architecture.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub payload: Payload,
    pub sender: Option<usize>,
    pub samples: Option<u64>,
}

impl BufferEntry {
    pub fn dense(model: ModelWeights) -> Self {
        Self {
            payload: Payload::Dense(Arc::new(model)),
            sender: None,
            samples: None,
        }
    }
}

/// Staging multiset of received models, averaged once it holds `capacity`
/// entries.
#[derive(Clone, Debug, Default)]
pub struct ModelBuffer {
    entries: Vec<BufferEntry>,
    capacity: usize,
}

impl ModelBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.capacity > 0 && self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Stores an entry. Fails on architecture mismatch or when already full.
    pub fn push(&mut self, entry: BufferEntry) -> Result<()> {
        if let Some(first) = self.entries.first() {
            if first.payload.architecture() != entry.payload.architecture() {
                return Err(Error::Architecture(
                    "buffer entries must share one architecture".into(),
                ));
            }
        }
        if self.is_full() {
            return Err(Error::Config(format!(
                "model buffer already holds its capacity of {}",
                self.capacity
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Result of averaging a full buffer, before blending into the node model.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub model: ModelWeights,
    /// Variance targets used for correction; `None` under plain averaging.
    pub targets: Option<Vec<Option<f64>>>,
    pub skipped: Vec<String>,
}

/// Averages a buffer according to `cfg`. Sparse entries are merged over
/// `base` (the receiver's current model); dense entries count as full
/// coverage.
pub fn aggregate(buffer: &ModelBuffer, base: &ModelWeights, cfg: &AveragingConfig) -> Result<Aggregate> {
    let entries = buffer.entries();
    if entries.is_empty() {
        return Err(Error::Empty("model buffer".into()));
    }
    let all_dense: Option<Vec<&ModelWeights>> = entries
        .iter()
        .map(|e| match &e.payload {
            Payload::Dense(m) => Some(&**m),
            Payload::Sparse(_) => None,
        })
        .collect();

    let (mut model, targets) = match all_dense {
        Some(models) => {
            let counts: Option<Vec<u64>> = entries.iter().map(|e| e.samples).collect();
            let model = match (cfg.fedavg_weighted, counts) {
                (true, Some(counts)) => weighted_fedavg(&models, &counts)?,
                _ => plain_average(&models)?,
            };
            let targets: Option<Vec<Option<f64>>> = match cfg.strategy {
                Strategy::Plain => None,
                Strategy::VarianceCorrected => {
                    Some(mean_layer_variances(&models)?.into_iter().map(Some).collect())
                }
            };
            (model, targets)
        }
        None => {
            let sparse: Vec<SparseModel> = entries
                .iter()
                .map(|e| match &e.payload {
                    Payload::Dense(m) => SparseModel::from_dense(m),
                    Payload::Sparse(s) => (**s).clone(),
                })
                .collect();
            let model = merge_sparse(&sparse, base)?;
            let targets: Option<Vec<Option<f64>>> = match cfg.strategy {
                Strategy::Plain => None,
                Strategy::VarianceCorrected => Some(
                    (0..base.layers.len())
                        .map(|l| {
                            let est: Vec<f64> = sparse
                                .iter()
                                .filter_map(|s| s.weight_sample_variance(l))
                                .collect();
                            (!est.is_empty()).then(|| est.iter().sum::<f64>() / est.len() as f64)
                        })
                        .collect(),
                ),
            };
            (model, targets)
        }
    };
    let skipped = match &targets {
        Some(t) => rescale_to_variance(&mut model, t),
        None => Vec::new(),
    };
    Ok(Aggregate {
        model,
        targets,
        skipped,
    })
}

/// The full receive-side update: aggregate, blend with `beta`, and optionally
/// rescale the blended model again.
pub fn update_from_buffer(
    old: &ModelWeights,
    buffer: &ModelBuffer,
    cfg: &AveragingConfig,
) -> Result<(ModelWeights, Vec<String>)> {
    let agg = aggregate(buffer, old, cfg)?;
    let mut next = blend(old, &agg.model, cfg.beta)?;
    let mut skipped = agg.skipped;
    if cfg.post_blend_correction {
        if let Some(targets) = &agg.targets {
            skipped.extend(rescale_to_variance(&mut next, targets));
        }
    }
    Ok((next, skipped))
}
