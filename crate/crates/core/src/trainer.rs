//! Mini-batch MSE training with Adam and step-halving learning rates.

use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::rng::SplitMix64;
use crate::samples::SampleSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs between learning-rate halvings.
    pub halving_period: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Weight of the squared parameter norm added to the loss.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    128
}

fn default_lr() -> f64 {
    1e-3
}

impl TrainConfig {
    /// 25 epochs, halving every 5.
    pub fn sdkn_default() -> Self {
        Self { batch_size: 128, epochs: 25, halving_period: 5, learning_rate: 1e-3, lambda: 0.0, seed: 0 }
    }

    /// 50 epochs, halving every 10.
    pub fn ann_default() -> Self {
        Self { epochs: 50, halving_period: 10, ..Self::sdkn_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size must be at least 1"));
        }
        if self.halving_period == 0 {
            return Err(Error::config("trainer.halving_period must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("trainer.learning_rate must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("trainer.lambda must be non-negative"));
        }
        Ok(())
    }
}

/// `base * 0.5^floor(epoch / period)`.
pub fn lr_at_epoch(base: f64, epoch: usize, period: usize) -> f64 {
    base * 0.5f64.powi((epoch / period.max(1)) as i32)
}

/// `(1/B) sum_i |pred_i - target_i|^2 + lambda * reg`.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var, lambda: f64, reg: Option<Var>) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
    }
    let rows = tape.value(pred).shape().first().copied().unwrap_or(1);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    let mse = tape.affine(total, 1.0 / rows as f64, 0.0);
    match reg {
        Some(r) if lambda > 0.0 => {
            let scaled = tape.affine(r, lambda, 0.0);
            tape.add(mse, scaled)
        }
        _ => Ok(mse),
    }
}

/// Squared l2 norm of every parameter, recorded on the tape.
pub fn l2_regularizer(tape: &mut Tape, params: &ParamStore) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let p = tape.param(params, &name)?;
        let sq = tape.square(p);
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub moments: IndexMap<String, Moments>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let moments = params
            .iter()
            .map(|(name, p)| {
                let z = Tensor::zeros(p.value.shape());
                (name.to_string(), Moments { m: z.clone(), v: z })
            })
            .collect();
        Self { beta1: ADAM_BETA1, beta2: ADAM_BETA2, epsilon: ADAM_EPSILON, t: 0, moments }
    }
}

/// One Adam update from the gradients in `params`, which are zeroed afterwards.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::numeric(format!("non-finite gradient for parameter {name}")));
        }
        if !state.moments.contains_key(name) {
            return Err(Error::config(format!("optimizer state has no entry for {name}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let mo = state.moments.get_mut(name).expect("checked above");
        let values = p.value.data_mut();
        let grads = p.grad.data_mut();
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            grads[i] = 0.0;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Absent for epochs restored from a checkpoint.
    pub wall_seconds: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: AdamState,
    pub rng: SplitMix64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub trace: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ParamStore, config: &TrainConfig) -> Self {
        let adam = AdamState::new(&params);
        Self { params, adam, rng: SplitMix64::new(config.seed), epoch: 0, trace: Vec::new() }
    }
}

/// Mean squared error of the model over a whole split, batched.
pub fn dataset_mse(graph: &ModelGraph, params: &ParamStore, set: &SampleSet, batch: usize) -> Result<f64> {
    let pred = crate::metrics::predict_all(graph, params, set, batch)?;
    // One flat sum, the same reduction the evaluation report uses.
    let total: f64 = pred.data().iter().zip(set.targets.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(total / set.len() as f64)
}

/// Runs one epoch: seeded shuffle, mini-batches, Adam updates.
pub fn train_epoch(
    graph: &ModelGraph,
    state: &mut TrainState,
    train: &SampleSet,
    val: Option<&SampleSet>,
    config: &TrainConfig,
) -> Result<EpochRecord> {
    let started = Instant::now();
    let epoch = state.epoch;
    let lr = lr_at_epoch(config.learning_rate, epoch, config.halving_period);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    state.rng.shuffle(&mut order);

    let mut loss_sum = 0.0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let (x, y) = train.batch(chunk);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let pred = graph.forward(&mut tape, &state.params, xv)?;
        let mse = mse_loss(&mut tape, pred, yv, 0.0, None)?;
        let mse_value = tape.value(mse).item();
        let loss = if config.lambda > 0.0 {
            let reg = l2_regularizer(&mut tape, &state.params)?;
            mse_loss(&mut tape, pred, yv, config.lambda, Some(reg))?
        } else {
            mse
        };
        if !tape.value(loss).item().is_finite() {
            return Err(Error::numeric(format!(
                "loss became non-finite at epoch {epoch}, batch {b}"
            )));
        }
        tape.backward(loss, &mut state.params)?;
        adam_step(&mut state.params, &mut state.adam, lr)
            .map_err(|e| Error::numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
        loss_sum += mse_value * chunk.len() as f64;
    }
    let val_mse = match val {
        Some(v) => Some(dataset_mse(graph, &state.params, v, config.batch_size)?),
        None => None,
    };
    let record = EpochRecord {
        epoch,
        lr,
        train_mse: loss_sum / n as f64,
        val_mse,
        wall_seconds: Some(started.elapsed().as_secs_f64()),
    };
    state.epoch += 1;
    state.trace.push(record.clone());
    Ok(record)
}

/// Trains until `config.epochs` epochs are complete, calling `on_epoch`
/// after each one (used for periodic checkpoints and progress output).
pub fn train_from<F>(
    graph: &ModelGraph,
    state: &mut TrainState,
    train: &SampleSet,
    val: Option<&SampleSet>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&TrainState) -> Result<()>,
{
    config.validate()?;
    graph.check_params(&state.params)?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    while state.epoch < config.epochs {
        train_epoch(graph, state, train, val, config)?;
        on_epoch(state)?;
    }
    Ok(())
}

/// Trains freshly initialized parameters and returns them with the loss trace.
pub fn train(
    graph: &ModelGraph,
    params: ParamStore,
    train_set: &SampleSet,
    val: Option<&SampleSet>,
    config: &TrainConfig,
) -> Result<(ParamStore, Vec<EpochRecord>)> {
    let mut state = TrainState::new(params, config);
    train_from(graph, &mut state, train_set, val, config, |_| Ok(()))?;
    Ok((state.params, state.trace))
}
