//! Time-series sample extraction, splitting and normalization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dns::{steps_in, Dns, DnsConfig, DnsField};
use super::filter::{ClosureOperator, FilterSpec};
use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tensor::Tensor;

/// Named input time-series layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingStrategy {
    #[serde(rename = "GRU1")]
    Gru1,
    #[serde(rename = "GRU2")]
    Gru2,
    #[serde(rename = "GRU3")]
    Gru3,
}

impl SamplingStrategy {
    pub fn n_seq(&self) -> usize {
        match self {
            SamplingStrategy::Gru1 => 3,
            SamplingStrategy::Gru2 => 10,
            SamplingStrategy::Gru3 => 21,
        }
    }

    pub fn dt_seq(&self) -> f64 {
        match self {
            SamplingStrategy::Gru1 => 1e-3,
            SamplingStrategy::Gru2 | SamplingStrategy::Gru3 => 1e-4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Gru1 => "GRU1",
            SamplingStrategy::Gru2 => "GRU2",
            SamplingStrategy::Gru3 => "GRU3",
        }
    }

    pub fn all() -> [SamplingStrategy; 3] {
        [SamplingStrategy::Gru1, SamplingStrategy::Gru2, SamplingStrategy::Gru3]
    }
}

/// Regression target at the last instant of each series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Filtered fine-grid flux divergence.
    #[default]
    FilteredFlux,
    /// Coarse operator on the filtered field minus the filtered flux.
    Closure,
}

/// Final instants `start, start + stride, ...` up to and including `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalTimes {
    pub start: f64,
    pub end: f64,
    pub stride: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl Splits {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "dataset.splits must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Block sizes `(train, val, test)` for `count` consecutive final times.
    pub fn counts(&self, count: usize) -> (usize, usize, usize) {
        let train = (self.train * count as f64 + 1e-9).floor() as usize;
        let val = ((self.val * count as f64 + 1e-9).floor() as usize).min(count - train);
        (train, val, count - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub dns: DnsConfig,
    pub seed: u64,
    pub filter: FilterSpec,
    pub strategy: SamplingStrategy,
    pub final_times: FinalTimes,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub target: TargetKind,
    /// When set, the test block is taken from a second simulation with this seed.
    #[serde(default)]
    pub blind_test_seed: Option<u64>,
}

/// Step indices of the final instants and the spacing of series members.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub finals: Vec<usize>,
    pub lag: usize,
    pub n_seq: usize,
}

impl Schedule {
    pub fn new(dns: &DnsConfig, strategy: SamplingStrategy, times: &FinalTimes) -> Result<Self> {
        let lag = steps_in(strategy.dt_seq(), dns.dt, "sequence spacing")?;
        let first = steps_in(times.start, dns.dt, "dataset.final_times.start")?;
        let last = steps_in(times.end, dns.dt, "dataset.final_times.end")?;
        let stride = steps_in(times.stride, dns.dt, "dataset.final_times.stride")?;
        if stride == 0 || lag == 0 {
            return Err(Error::config("final-time stride and sequence spacing must be positive"));
        }
        let n_seq = strategy.n_seq();
        if first < (n_seq - 1) * lag {
            return Err(Error::config(format!(
                "dataset.final_times.start = {} leaves no room for {} instances spaced {}",
                times.start,
                n_seq,
                strategy.dt_seq()
            )));
        }
        if last < first {
            return Err(Error::config("dataset.final_times.end precedes start"));
        }
        let finals: Vec<usize> = (first..=last).step_by(stride).collect();
        Ok(Self { finals, lag, n_seq })
    }

    pub fn input_steps(&self, finals: &[usize]) -> BTreeSet<usize> {
        finals
            .iter()
            .flat_map(|&f| (0..self.n_seq).map(move |j| f - j * self.lag))
            .collect()
    }
}

struct Extracted {
    filtered: BTreeMap<usize, Vec<f64>>,
    targets: BTreeMap<usize, Vec<f64>>,
}

fn target_of(op: &ClosureOperator, kind: TargetKind, u: &[f64]) -> Result<Vec<f64>> {
    match kind {
        TargetKind::FilteredFlux => op.filtered_flux(u),
        TargetKind::Closure => op.closure_term(u),
    }
}

fn assemble(ex: &Extracted, schedule: &Schedule, finals: &[usize], n_c: usize) -> Result<SampleSet> {
    let count = finals.len() * n_c;
    if count == 0 {
        return Err(Error::config("no final times selected; widen dataset.final_times"));
    }
    let mut inputs = Vec::with_capacity(count * schedule.n_seq);
    let mut targets = Vec::with_capacity(count);
    for &f in finals {
        let series: Vec<&Vec<f64>> = (0..schedule.n_seq)
            .rev()
            .map(|j| &ex.filtered[&(f - j * schedule.lag)])
            .collect();
        let target = &ex.targets[&f];
        for point in 0..n_c {
            inputs.extend(series.iter().map(|s| s[point]));
            targets.push(target[point]);
        }
    }
    SampleSet::new(
        Tensor::new(vec![count, schedule.n_seq, 1], inputs)?,
        Tensor::new(vec![count, 1], targets)?,
    )
}

/// Samples from stored snapshots, one per coarse point and final step,
/// ordered by final step then point.
pub fn extract_samples(
    field: &DnsField,
    op: &ClosureOperator,
    kind: TargetKind,
    schedule: &Schedule,
    finals: &[usize],
) -> Result<SampleSet> {
    let mut ex = Extracted { filtered: BTreeMap::new(), targets: BTreeMap::new() };
    for step in schedule.input_steps(finals) {
        ex.filtered.insert(step, op.filter().apply(&field.at_step(step)?.u)?);
    }
    for &f in finals {
        ex.targets.insert(f, target_of(op, kind, &field.at_step(f)?.u)?);
    }
    assemble(&ex, schedule, finals, op.filter().coarse_size())
}

/// Runs a DNS keeping only the filtered fields and targets the schedule needs.
fn stream(config: &DatasetConfig, seed: u64, op: &ClosureOperator, schedule: &Schedule, finals: &[usize]) -> Result<Extracted> {
    let needed = schedule.input_steps(finals);
    let wanted_targets: BTreeSet<usize> = finals.iter().copied().collect();
    let last = *needed.iter().next_back().expect("non-empty schedule");
    let mut dns = Dns::new(&config.dns, seed)?;
    let mut ex = Extracted { filtered: BTreeMap::new(), targets: BTreeMap::new() };
    loop {
        let step = dns.step_index();
        if needed.contains(&step) {
            ex.filtered.insert(step, op.filter().apply(dns.u())?);
        }
        if wanted_targets.contains(&step) {
            ex.targets.insert(step, target_of(op, config.target, dns.u())?);
        }
        if step == last {
            break;
        }
        dns.advance()?;
    }
    Ok(ex)
}

/// Train, validation and test samples together with the final steps of each block.
pub struct Built {
    pub train: SampleSet,
    pub val: Option<SampleSet>,
    pub test: Option<SampleSet>,
    pub finals: [Vec<usize>; 3],
    pub lag: usize,
}

/// Generates the three splits from consecutive blocks of final times.
pub fn build_dataset(config: &DatasetConfig) -> Result<Built> {
    config.splits.validate()?;
    let schedule = Schedule::new(&config.dns, config.strategy, &config.final_times)?;
    let op = ClosureOperator::new(config.filter, config.dns.n, config.dns.viscosity, config.dns.flux)?;
    let n_c = op.filter().coarse_size();
    let (n_train, n_val, _) = config.splits.counts(schedule.finals.len());
    let train_f = schedule.finals[..n_train].to_vec();
    let val_f = schedule.finals[n_train..n_train + n_val].to_vec();
    let test_f = schedule.finals[n_train + n_val..].to_vec();
    if train_f.is_empty() {
        return Err(Error::config(format!(
            "only {} final times available; the training split is empty",
            schedule.finals.len()
        )));
    }
    let optional = |ex: &Extracted, f: &[usize]| -> Result<Option<SampleSet>> {
        if f.is_empty() {
            Ok(None)
        } else {
            assemble(ex, &schedule, f, n_c).map(Some)
        }
    };
    let (train, val, test) = match config.blind_test_seed {
        None => {
            let ex = stream(config, config.seed, &op, &schedule, &schedule.finals)?;
            (assemble(&ex, &schedule, &train_f, n_c)?, optional(&ex, &val_f)?, optional(&ex, &test_f)?)
        }
        Some(blind) => {
            let fitted: Vec<usize> = train_f.iter().chain(&val_f).copied().collect();
            let ex = stream(config, config.seed, &op, &schedule, &fitted)?;
            let test = if test_f.is_empty() {
                None
            } else {
                optional(&stream(config, blind, &op, &schedule, &test_f)?, &test_f)?
            };
            (assemble(&ex, &schedule, &train_f, n_c)?, optional(&ex, &val_f)?, test)
        }
    };
    Ok(Built { train, val, test, finals: [train_f, val_f, test_f], lag: schedule.lag })
}

/// Per-component shift and scale fitted on the training split.
///
/// Input statistics pool all time instances of a component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn column_stats(data: &[f64], width: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = data.len() / width;
    let mut mean = vec![0.0; width];
    for row in data.chunks(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; width];
    for row in data.chunks(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / rows as f64).sqrt()).collect();
    if let Some(i) = std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::config(format!("{what} component {i} has zero variance; cannot normalize")));
    }
    Ok((mean, std))
}

fn standardize(data: &mut [f64], mean: &[f64], std: &[f64]) {
    for row in data.chunks_mut(mean.len()) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

impl Normalizer {
    pub fn fit(train: &SampleSet) -> Result<Self> {
        let d_in = *train.inputs.shape().last().expect("rank >= 2");
        let (input_mean, input_std) = column_stats(train.inputs.data(), d_in, "input")?;
        let (target_mean, target_std) = column_stats(train.targets.data(), train.d_out(), "target")?;
        Ok(Self { input_mean, input_std, target_mean, target_std })
    }

    pub fn apply(&self, set: &SampleSet) -> Result<SampleSet> {
        let d_in = *set.inputs.shape().last().expect("rank >= 2");
        if d_in != self.input_mean.len() || set.d_out() != self.target_mean.len() {
            return Err(Error::config(format!(
                "normalizer fitted for {} inputs / {} targets, data has {d_in} / {}",
                self.input_mean.len(),
                self.target_mean.len(),
                set.d_out()
            )));
        }
        let mut inputs = set.inputs.clone();
        let mut targets = set.targets.clone();
        standardize(inputs.data_mut(), &self.input_mean, &self.input_std);
        standardize(targets.data_mut(), &self.target_mean, &self.target_std);
        SampleSet::new(inputs, targets)
    }

    /// Maps normalized predictions back to physical units.
    pub fn denormalize_targets(&self, pred: &Tensor) -> Tensor {
        let mut out = pred.clone();
        for row in out.data_mut().chunks_mut(self.target_mean.len()) {
            for ((v, m), s) in row.iter_mut().zip(&self.target_mean).zip(&self.target_std) {
                *v = *v * s + m;
            }
        }
        out
    }
}
