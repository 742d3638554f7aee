//! Minimal dense feedforward network: Xavier initialization, forward and
//! backward passes for softmax cross-entropy, momentum SGD and accuracy.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::None => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed in terms of
    /// the activation output.
    fn backprop(self, grad: &mut Array2<f64>, output: &Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(grad).and(output).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad)
                .and(output)
                .for_each(|g, &a| *g *= 1.0 - a * a),
            Activation::None => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            n_in,
            n_out,
            activation,
        }
    }
}

/// Builds a dense architecture from layer widths, e.g. `[784, 128, 10]`.
/// Hidden layers use `hidden`; the output layer has no activation. Layers are
/// named `fc1`, `fc2`, ...
pub fn mlp(sizes: &[usize], hidden: Activation) -> Result<Vec<LayerSpec>> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an architecture needs at least two widths, got {sizes:?}"
        )));
    }
    let last = sizes.len() - 2;
    let arch: Vec<LayerSpec> = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last { Activation::None } else { hidden };
            LayerSpec::new(format!("fc{}", i + 1), w[0], w[1], act)
        })
        .collect();
    validate_architecture(&arch)?;
    Ok(arch)
}

pub fn validate_architecture(arch: &[LayerSpec]) -> Result<()> {
    let Some(last) = arch.last() else {
        return Err(Error::Config("architecture has no layers".into()));
    };
    for (i, layer) in arch.iter().enumerate() {
        if layer.n_in == 0 || layer.n_out == 0 {
            return Err(Error::Config(format!("layer `{}` has a zero fan", layer.name)));
        }
        if arch[..i].iter().any(|l| l.name == layer.name) {
            return Err(Error::Config(format!("duplicate layer name `{}`", layer.name)));
        }
        if let Some(next) = arch.get(i + 1) {
            if layer.n_out != next.n_in {
                return Err(Error::Config(format!(
                    "fan chain broken: `{}` outputs {} but `{}` takes {}",
                    layer.name, layer.n_out, next.name, next.n_in
                )));
            }
        }
    }
    if last.activation != Activation::None {
        return Err(Error::Config(
            "the final layer must not have an activation (logits feed the softmax)".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `n_out x n_in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weight and bias entries as one flat sequence: weights row-major, then
    /// biases. Sparse payloads index into this layout.
    pub fn param(&self, flat: usize) -> f64 {
        let nw = self.weights.len();
        if flat < nw {
            let cols = self.weights.ncols();
            self.weights[(flat / cols, flat % cols)]
        } else {
            self.bias[flat - nw]
        }
    }

    pub fn param_mut(&mut self, flat: usize) -> &mut f64 {
        let nw = self.weights.len();
        if flat < nw {
            let cols = self.weights.ncols();
            &mut self.weights[(flat / cols, flat % cols)]
        } else {
            &mut self.bias[flat - nw]
        }
    }
}

/// Weights of a whole network, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<Layer>,
}

impl ModelWeights {
    pub fn zeros(arch: &[LayerSpec]) -> Result<Self> {
        validate_architecture(arch)?;
        Ok(Self {
            layers: arch
                .iter()
                .map(|spec| Layer {
                    spec: spec.clone(),
                    weights: Array2::zeros((spec.n_out, spec.n_in)),
                    bias: Array1::zeros(spec.n_out),
                })
                .collect(),
        })
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn same_architecture(&self, other: &ModelWeights) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.spec == b.spec)
    }

    pub fn ensure_compatible(&self, other: &ModelWeights) -> Result<()> {
        if self.same_architecture(other) {
            Ok(())
        } else {
            Err(Error::Architecture(format!(
                "{} vs {}",
                ArchSummary(self),
                ArchSummary(other)
            )))
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.n_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.n_out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Largest absolute element-wise difference over all weights and biases.
    pub fn max_abs_diff(&self, other: &ModelWeights) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.weights
                    .iter()
                    .zip(b.weights.iter())
                    .chain(a.bias.iter().zip(b.bias.iter()))
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }

    /// `self += alpha * other`, element-wise.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelWeights) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.spec.name == name)
    }
}

struct ArchSummary<'a>(&'a ModelWeights);

impl fmt::Display for ArchSummary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .layers
            .iter()
            .map(|l| format!("{}({}x{})", l.spec.name, l.spec.n_in, l.spec.n_out))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDistribution {
    #[default]
    Uniform,
    Normal,
}

/// Target weight variance for a layer: `2 / (n_in + n_out)`.
pub fn xavier_variance(n_in: usize, n_out: usize) -> f64 {
    2.0 / (n_in + n_out) as f64
}

/// Half-width of the Xavier uniform range: `sqrt(6 / (n_in + n_out))`.
pub fn xavier_bound(n_in: usize, n_out: usize) -> f64 {
    (6.0 / (n_in + n_out) as f64).sqrt()
}

/// Draws every weight i.i.d. from the Xavier distribution of its layer;
/// biases start at zero.
pub fn xavier_init<R: Rng + ?Sized>(
    arch: &[LayerSpec],
    dist: InitDistribution,
    rng: &mut R,
) -> Result<ModelWeights> {
    let mut model = ModelWeights::zeros(arch)?;
    for layer in &mut model.layers {
        let (n_in, n_out) = (layer.spec.n_in, layer.spec.n_out);
        match dist {
            InitDistribution::Uniform => {
                let bound = xavier_bound(n_in, n_out);
                let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                layer.weights.mapv_inplace(|_| u.sample(rng));
            }
            InitDistribution::Normal => {
                let n = Normal::new(0.0, xavier_variance(n_in, n_out).sqrt())
                    .expect("positive std");
                layer.weights.mapv_inplace(|_| n.sample(rng));
            }
        }
    }
    Ok(model)
}

fn check_batch(model: &ModelWeights, batch: &ArrayView2<f64>) -> Result<()> {
    if batch.ncols() != model.input_width() {
        return Err(Error::Shape(format!(
            "batch has {} features, first layer expects {}",
            batch.ncols(),
            model.input_width()
        )));
    }
    Ok(())
}

/// Post-activation outputs of every layer; the last entry holds the logits.
fn forward_all(model: &ModelWeights, batch: &ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = outputs.last().map(|a| a.view()).unwrap_or(batch.view());
        let mut z = input.dot(&layer.weights.t());
        z += &layer.bias;
        layer.spec.activation.apply(&mut z);
        outputs.push(z);
    }
    outputs
}

pub fn forward(model: &ModelWeights, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_batch(model, &batch)?;
    Ok(forward_all(model, &batch).pop().expect("non-empty model"))
}

fn check_labels(model: &ModelWeights, batch: &ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    check_batch(model, batch)?;
    if labels.len() != batch.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {} rows",
            labels.len(),
            batch.nrows()
        )));
    }
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    let classes = model.output_width();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Row-wise softmax, in place.
fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Mean softmax cross-entropy of the batch.
pub fn loss(model: &ModelWeights, batch: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(model, &batch, labels)?;
    let logits = forward(model, batch)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to every weight and bias.
pub fn backward(
    model: &ModelWeights,
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<ModelWeights> {
    check_labels(model, &batch, labels)?;
    let outputs = forward_all(model, &batch);
    let n = labels.len() as f64;

    let mut delta = outputs.last().expect("non-empty model").clone();
    softmax_rows(&mut delta);
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    delta /= n;

    let mut grads: Vec<Layer> = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let input = if i == 0 { batch.view() } else { outputs[i - 1].view() };
        let weights = delta.t().dot(&input).as_standard_layout().into_owned();
        let bias = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut upstream = delta.dot(&layer.weights);
            model.layers[i - 1]
                .spec
                .activation
                .backprop(&mut upstream, &outputs[i - 1]);
            delta = upstream;
        }
        grads.push(Layer {
            spec: layer.spec.clone(),
            weights,
            bias,
        });
    }
    grads.reverse();
    Ok(ModelWeights { layers: grads })
}

/// Momentum SGD hyperparameters with Caffe's "inv" learning-rate policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_gamma: 0.0001,
            lr_power: 0.75,
            batch_size: 64,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// `base_lr * (1 + gamma * t)^(-power)`
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        self.base_lr * (1.0 + self.lr_gamma * iteration as f64).powf(-self.lr_power)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: ModelWeights,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(model: &ModelWeights) -> Self {
        let mut velocity = model.clone();
        velocity.scale(0.0);
        Self {
            velocity,
            iteration: 0,
        }
    }
}

/// One momentum step:
/// `v <- momentum * v - lr(t) * (g + decay * w)`, then `w <- w + v`.
pub fn sgd_step(
    model: &mut ModelWeights,
    grads: &ModelWeights,
    opt: &mut OptimizerState,
    hp: &Hyperparams,
) -> Result<()> {
    model.ensure_compatible(grads)?;
    model.ensure_compatible(&opt.velocity)?;
    if let Some(bad) = grads.layers.iter().find(|l| {
        l.weights.iter().any(|v| !v.is_finite()) || l.bias.iter().any(|v| !v.is_finite())
    }) {
        return Err(Error::NonFiniteGradient {
            layer: bad.spec.name.clone(),
        });
    }
    let lr = hp.learning_rate(opt.iteration);
    let (mu, decay) = (hp.momentum, hp.weight_decay);
    for ((layer, grad), vel) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
    {
        Zip::from(&mut layer.weights)
            .and(&grad.weights)
            .and(&mut vel.weights)
            .for_each(|w, &g, v| {
                *v = mu * *v - lr * (g + decay * *w);
                *w += *v;
            });
        Zip::from(&mut layer.bias)
            .and(&grad.bias)
            .and(&mut vel.bias)
            .for_each(|w, &g, v| {
                *v = mu * *v - lr * (g + decay * *w);
                *w += *v;
            });
    }
    opt.iteration += 1;
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

const EVAL_CHUNK: usize = 512;

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(model: &ModelWeights, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let images = dataset.images();
    let labels = dataset.labels();
    let mut correct = 0usize;
    for start in (0..dataset.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let logits = forward(model, images.slice(ndarray::s![start..end, ..]))?;
        correct += logits
            .rows()
            .into_iter()
            .zip(&labels[start..end])
            .filter(|(row, &y)| argmax(row.iter().copied()) == y as usize)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}
