//! Test-set scores and activation-function profiles.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{param_name, Block, ModelGraph};
use crate::samples::SampleSet;
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 50;

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if !(va > 0.0 && vb > 0.0) {
        return None;
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() || pred.rank() != 2 {
        return Err(Error::config(format!(
            "prediction {:?} and target {:?} must be equal n x d_out shapes",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::usage("cross-correlation needs at least two values"));
    }
    Ok(())
}

/// Pearson correlation over all entries pooled; `None` when either side is constant.
pub fn cross_correlation(pred: &Tensor, target: &Tensor) -> Result<Option<f64>> {
    check_pair(pred, target)?;
    Ok(pearson(pred.data(), target.data()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub mse: f64,
    /// `null` when undefined.
    pub cross_correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub split: String,
    pub samples: usize,
    /// Mean over samples of the squared error norm.
    pub mse: f64,
    pub cross_correlation: Option<f64>,
    pub components: Vec<ComponentMetrics>,
}

/// Scores predictions against targets (both `n x d_out`).
pub fn score(pred: &Tensor, target: &Tensor, model_id: &str, dataset_id: &str, split: &str) -> Result<EvalReport> {
    if pred.is_empty() || target.shape().first() == Some(&0) {
        return Err(Error::usage("cannot evaluate an empty split"));
    }
    check_pair(pred, target)?;
    let (n, d) = (pred.shape()[0], pred.shape()[1]);
    let sq: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    let components = (0..d)
        .map(|j| {
            let p: Vec<f64> = (0..n).map(|i| pred.at(i, j)).collect();
            let t: Vec<f64> = (0..n).map(|i| target.at(i, j)).collect();
            let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
            let cross_correlation = if n >= 2 { pearson(&p, &t) } else { None };
            ComponentMetrics { mse, cross_correlation }
        })
        .collect();
    Ok(EvalReport {
        model_id: model_id.to_string(),
        dataset_id: dataset_id.to_string(),
        split: split.to_string(),
        samples: n,
        mse: sq / n as f64,
        cross_correlation: pearson(pred.data(), target.data()),
        components,
    })
}

/// Batched predictions of a graph over a whole split.
pub fn predict_all(graph: &ModelGraph, params: &ParamStore, set: &SampleSet, batch: usize) -> Result<Tensor> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len() * set.d_out());
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = set.batch(chunk);
        out.extend_from_slice(graph.predict(params, &x)?.data());
    }
    Tensor::new(vec![set.len(), set.d_out()], out)
}

pub fn evaluate(
    graph: &ModelGraph,
    params: &ParamStore,
    set: &SampleSet,
    model_id: &str,
    dataset_id: &str,
    split: &str,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::usage("cannot evaluate an empty split"));
    }
    let pred = predict_all(graph, params, set, 1024)?;
    score(&pred, &set.targets, model_id, dataset_id, split)
}

/// Evaluation grid for activation profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    /// Fixed `[lo, hi]`; by default the observed input range of each dimension.
    #[serde(default)]
    pub range: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 201, range: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationProfile {
    pub layer: usize,
    pub dim: usize,
    pub grid: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub hist_left_edges: Vec<f64>,
    pub hist_counts: Vec<usize>,
}

impl ActivationProfile {
    /// Columns `grid, before, after, hist_left_edge, hist_count`; the shorter
    /// column group is padded with empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("grid,before,after,hist_left_edge,hist_count\n");
        let rows = self.grid.len().max(self.hist_counts.len());
        for r in 0..rows {
            if r < self.grid.len() {
                s.push_str(&format!("{},{},{}", self.grid[r], self.before[r], self.after[r]));
            } else {
                s.push_str(",,");
            }
            if r < self.hist_counts.len() {
                s.push_str(&format!(",{},{}\n", self.hist_left_edges[r], self.hist_counts[r]));
            } else {
                s.push_str(",,\n");
            }
        }
        s
    }

    pub fn file_name(&self) -> String {
        format!("layer_{}_dim_{}.csv", self.layer, self.dim)
    }
}

/// `(left_edges, counts)` of `bins` uniform bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, width) = if values.is_empty() {
        (0.0, 1.0 / bins as f64)
    } else if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        (lo - 0.5, 1.0 / bins as f64)
    };
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    ((0..bins).map(|b| lo + b as f64 * width).collect(), counts)
}

fn expansion(params: &ParamStore, layer: usize, dim: usize, kernel: &crate::kernels::KernelSpec, g: f64) -> Result<f64> {
    let c = params.value(&param_name(layer, "C"))?;
    let a = params.value(&param_name(layer, "A"))?;
    let m = c.shape()[1];
    Ok((0..m).map(|j| a.at(dim, j) * kernel.radial(g - c.at(dim, j)).0).sum())
}

/// One profile per activation-kernel dimension, before and after training.
///
/// Histograms use the inputs each layer receives when the training inputs
/// are propagated with the trained parameters.
pub fn export_activation_profiles(
    graph: &ModelGraph,
    before: &ParamStore,
    after: &ParamStore,
    train_inputs: &Tensor,
    grid: &GridSpec,
) -> Result<Vec<ActivationProfile>> {
    let layers = graph.activation_layers();
    if layers.is_empty() {
        return Err(Error::config("the model has no activation-kernel layers"));
    }
    if grid.points < 2 {
        return Err(Error::config("activation grid needs at least two points"));
    }
    graph.check_params(before)?;
    graph.check_params(after)?;
    let mut out = Vec::new();
    for &layer in &layers {
        let (dim, kernel) = match graph.blocks[layer] {
            Block::ActivationKernel { dim, kernel, .. } => (dim, kernel),
            _ => unreachable!("activation_layers returns activation blocks"),
        };
        let feats = graph.features(after, train_inputs, layer)?;
        for d in 0..dim {
            let column: Vec<f64> = (0..feats.shape()[0]).map(|r| feats.at(r, d)).collect();
            let (hist_left_edges, hist_counts) = histogram(&column, HISTOGRAM_BINS);
            let (lo, hi) = grid.range.unwrap_or_else(|| {
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) }
            });
            if !(hi > lo) {
                return Err(Error::config("activation grid range must satisfy lo < hi"));
            }
            let points: Vec<f64> = (0..grid.points)
                .map(|i| lo + (hi - lo) * i as f64 / (grid.points - 1) as f64)
                .collect();
            let before_vals = points.iter().map(|&g| expansion(before, layer, d, &kernel, g)).collect::<Result<_>>()?;
            let after_vals = points.iter().map(|&g| expansion(after, layer, d, &kernel, g)).collect::<Result<_>>()?;
            out.push(ActivationProfile {
                layer,
                dim: d,
                grid: points,
                before: before_vals,
                after: after_vals,
                hist_left_edges,
                hist_counts,
            });
        }
    }
    Ok(out)
}
