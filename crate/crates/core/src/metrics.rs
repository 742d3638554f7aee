//! Run metrics: per-node accuracy, layer-wise weight differences, layer
//! variance trajectories, plateau-delay detection and 90%-accuracy timing.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Layer, ModelWeights};
use crate::{Error, Result};

pub const TARGET_ACCURACY: f64 = 0.9;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

/// Population variance of a layer's weight matrix; biases are excluded.
pub fn weight_variance(layer: &Layer) -> f64 {
    let n = layer.weights.len() as f64;
    let mean = layer.weights.sum() / n;
    layer.weights.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

pub fn layer_variance(model: &ModelWeights) -> Vec<f64> {
    model.layers.iter().map(weight_variance).collect()
}

/// Ring-ordered mean layer-wise L1 distance between consecutive models:
/// `(1/N) * sum_n |model[(n+1) mod N] - model[n]|`, over each layer's
/// weights and biases.
pub fn model_weight_difference<M: Borrow<ModelWeights>>(models: &[M]) -> Result<Vec<f64>> {
    if models.len() < 2 {
        return Err(Error::Empty(
            "weight difference needs at least two models".into(),
        ));
    }
    let first = models[0].borrow();
    for m in &models[1..] {
        first.ensure_compatible(m.borrow())?;
    }
    let n = models.len();
    Ok((0..first.layers.len())
        .map(|l| {
            let total: f64 = (0..n)
                .map(|i| {
                    let a = &models[(i + 1) % n].borrow().layers[l];
                    let b = &models[i].borrow().layers[l];
                    let w: f64 = a
                        .weights
                        .iter()
                        .zip(b.weights.iter())
                        .map(|(x, y)| (x - y).abs())
                        .sum();
                    let bias: f64 = a.bias.iter().zip(b.bias.iter()).map(|(x, y)| (x - y).abs()).sum();
                    w + bias
                })
                .sum();
            total / n as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    /// Earliest tick after the first averaging with the steepest smoothed
    /// accuracy rise.
    pub t_plateau_delay: u64,
    pub t_first_average: u64,
    /// `(tick, estimated derivative)` at every interior sample.
    pub derivative: Vec<(u64, f64)>,
    /// Set when every candidate derivative is equal (e.g. a flat series).
    pub degenerate: bool,
}

/// Derivatives closer than this count as equal.
pub const DERIVATIVE_TIE: f64 = 1e-12;

/// Centered moving average; windows are truncated at the series ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Locates the steepest rise of a mean-accuracy series after the first
/// averaging event. The series is smoothed with a centered moving average of
/// `window` samples, then differentiated with central differences.
pub fn plateau_delay(
    series: &[(u64, f64)],
    t_first_average: u64,
    window: usize,
) -> Result<PlateauReport> {
    let after = series.iter().filter(|(t, _)| *t > t_first_average).count();
    if after < 3 {
        return Err(Error::SeriesTooShort(format!(
            "{after} samples after the first averaging at tick {t_first_average}; need 3"
        )));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Config("accuracy series ticks must increase".into()));
    }
    let values: Vec<f64> = series.iter().map(|&(_, v)| v).collect();
    let smooth = moving_average(&values, window.max(1));
    let derivative: Vec<(u64, f64)> = (1..series.len() - 1)
        .map(|i| {
            let dt = (series[i + 1].0 - series[i - 1].0) as f64;
            (series[i].0, (smooth[i + 1] - smooth[i - 1]) / dt)
        })
        .collect();

    let candidates: Vec<(u64, f64)> = derivative
        .iter()
        .copied()
        .filter(|(t, _)| *t > t_first_average)
        .collect();
    let top = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let lowest = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    // smoothing leaves rounding noise on flat stretches; treat it as a tie
    let t_plateau_delay = candidates
        .iter()
        .find(|c| top - c.1 <= DERIVATIVE_TIE)
        .map(|c| c.0)
        .ok_or_else(|| {
            Error::SeriesTooShort("no interior samples after the first averaging".into())
        })?;
    Ok(PlateauReport {
        t_plateau_delay,
        t_first_average,
        derivative,
        degenerate: top - lowest <= DERIVATIVE_TIE,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reach90 {
    /// Earliest tick at which any node reaches the target accuracy.
    pub first: Option<u64>,
    /// Earliest tick at which strictly more than 90% of nodes have.
    pub most: Option<u64>,
}

/// Scans evaluation records (ascending ticks, one accuracy per node).
pub fn reach_90<A: AsRef<[f64]>>(records: &[(u64, A)]) -> Reach90 {
    let mut out = Reach90::default();
    for (tick, accs) in records {
        let accs = accs.as_ref();
        let hits = accs.iter().filter(|&&a| a >= TARGET_ACCURACY).count();
        if out.first.is_none() && hits > 0 {
            out.first = Some(*tick);
        }
        if out.most.is_none() && !accs.is_empty() && hits * 10 > accs.len() * 9 {
            out.most = Some(*tick);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub tick: u64,
    pub node: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub tick: u64,
    pub node: usize,
    pub layer: String,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDiffRow {
    pub tick: u64,
    pub layer: String,
    pub diff: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub accuracy: Vec<AccuracyRow>,
    pub variance: Vec<VarianceRow>,
    pub weight_diff: Vec<WeightDiffRow>,
    /// Parameter-server accuracy; empty outside federated runs.
    pub server_accuracy: Vec<(u64, f64)>,
    pub t_first_average: Option<u64>,
    /// Number of averaging events, across all nodes.
    pub averaging_events: u64,
    pub config_digest: String,
}

impl MetricsLog {
    /// Accuracy of every node at each evaluation tick, in node order.
    pub fn accuracy_by_tick(&self) -> Vec<(u64, Vec<f64>)> {
        let mut map: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for row in &self.accuracy {
            map.entry(row.tick).or_default().push((row.node, row.accuracy));
        }
        map.into_iter()
            .map(|(t, mut v)| {
                v.sort_by_key(|&(n, _)| n);
                (t, v.into_iter().map(|(_, a)| a).collect())
            })
            .collect()
    }

    /// A(t): mean accuracy over the logged nodes at each evaluation tick.
    pub fn mean_accuracy(&self) -> Vec<(u64, f64)> {
        self.accuracy_by_tick()
            .into_iter()
            .map(|(t, v)| (t, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }

    pub fn reach_90(&self) -> Reach90 {
        reach_90(&self.accuracy_by_tick())
    }

    pub fn server_reach_90(&self) -> Option<Reach90> {
        if self.server_accuracy.is_empty() {
            return None;
        }
        let records: Vec<(u64, [f64; 1])> =
            self.server_accuracy.iter().map(|&(t, a)| (t, [a])).collect();
        Some(reach_90(&records))
    }

    pub fn plateau(&self, window: usize) -> Result<PlateauReport> {
        let anchor = self
            .t_first_average
            .ok_or_else(|| Error::SeriesTooShort("no averaging event was recorded".into()))?;
        plateau_delay(&self.mean_accuracy(), anchor, window)
    }

    /// Per layer, the smallest variance logged for any node at ticks in
    /// `[from, to]`.
    pub fn min_variance_between(&self, from: u64, to: u64) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for row in self.variance.iter().filter(|r| r.tick >= from && r.tick <= to) {
            let slot = out.entry(row.layer.clone()).or_insert(f64::INFINITY);
            *slot = slot.min(row.variance);
        }
        out
    }
}
