//! Binary checkpoints: magic, length-prefixed JSON metadata, raw tensors.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::config::ExperimentConfig;
use crate::data::content_id;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{KrrModel, ModelGraph};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::trainer::{AdamState, EpochRecord, Moments, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDKNCP01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelState {
    Network { graph: ModelGraph, state: TrainState },
    Krr(KrrModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub dataset_id: String,
    pub model: ModelState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceEntry {
    epoch: usize,
    lr: f64,
    train_mse: f64,
    val_mse: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelMeta {
    Network {
        graph: ModelGraph,
        epoch: usize,
        rng_state: u64,
        adam: AdamMeta,
        trace: Vec<TraceEntry>,
    },
    Krr {
        kernel: KernelSpec,
        lambda: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    config: ExperimentConfig,
    dataset_id: String,
    model: ModelMeta,
    tensors: Vec<TensorEntry>,
}

const PARAM: &str = "param:";
const ADAM_M: &str = "adam_m:";
const ADAM_V: &str = "adam_v:";

impl Checkpoint {
    pub fn network(config: ExperimentConfig, dataset_id: String, graph: ModelGraph, state: TrainState) -> Self {
        Self { config, dataset_id, model: ModelState::Network { graph, state } }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        let model = match &self.model {
            ModelState::Network { graph, state } => {
                for (name, p) in state.params.iter() {
                    tensors.push((format!("{PARAM}{name}"), &p.value));
                }
                for (name, m) in &state.adam.moments {
                    tensors.push((format!("{ADAM_M}{name}"), &m.m));
                    tensors.push((format!("{ADAM_V}{name}"), &m.v));
                }
                ModelMeta::Network {
                    graph: graph.clone(),
                    epoch: state.epoch,
                    rng_state: state.rng.state(),
                    adam: AdamMeta {
                        beta1: state.adam.beta1,
                        beta2: state.adam.beta2,
                        epsilon: state.adam.epsilon,
                        t: state.adam.t,
                    },
                    trace: state
                        .trace
                        .iter()
                        .map(|r| TraceEntry { epoch: r.epoch, lr: r.lr, train_mse: r.train_mse, val_mse: r.val_mse })
                        .collect(),
                }
            }
            ModelState::Krr(k) => {
                tensors.push(("centers".into(), &k.centers));
                tensors.push(("coefficients".into(), &k.coefficients));
                ModelMeta::Krr { kernel: k.kernel, lambda: k.lambda }
            }
        };
        let meta = Meta {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            dataset_id: self.dataset_id.clone(),
            model,
            tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let json = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| Error::format("truncated checkpoint metadata"))?;
        let meta: Meta =
            serde_json::from_slice(json).map_err(|e| Error::format(format!("bad checkpoint metadata: {e}")))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {}", meta.format_version)));
        }
        let mut payload = &bytes[16 + len..];
        let mut tensors: IndexMap<String, Tensor> = IndexMap::new();
        for entry in &meta.tensors {
            let count: usize = entry.shape.iter().product();
            if payload.len() < 8 * count {
                return Err(Error::format(format!("checkpoint payload truncated at tensor {}", entry.name)));
            }
            let data = payload[..8 * count]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[8 * count..];
            let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::format(e.to_string()))?;
            if tensors.insert(entry.name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate tensor {} in checkpoint", entry.name)));
            }
        }
        if !payload.is_empty() {
            return Err(Error::format("trailing bytes after checkpoint payload"));
        }
        let model = match meta.model {
            ModelMeta::Network { graph, epoch, rng_state, adam, trace } => {
                let mut params = ParamStore::new();
                let mut moments = IndexMap::new();
                for (name, t) in &tensors {
                    if let Some(p) = name.strip_prefix(PARAM) {
                        params.insert(p, t.clone())?;
                    }
                }
                for name in params.names() {
                    let get = |prefix: &str| {
                        tensors
                            .get(&format!("{prefix}{name}"))
                            .cloned()
                            .ok_or_else(|| Error::format(format!("checkpoint lacks optimizer moments for {name}")))
                    };
                    moments.insert(name.to_string(), Moments { m: get(ADAM_M)?, v: get(ADAM_V)? });
                }
                if tensors.len() != 3 * params.len() {
                    return Err(Error::format("checkpoint holds tensors that belong to no parameter"));
                }
                graph.validate().map_err(|e| Error::format(format!("checkpoint graph: {e}")))?;
                graph.check_params(&params).map_err(|e| Error::format(format!("checkpoint parameters: {e}")))?;
                let state = TrainState {
                    params,
                    adam: AdamState { beta1: adam.beta1, beta2: adam.beta2, epsilon: adam.epsilon, t: adam.t, moments },
                    rng: SplitMix64::from_state(rng_state),
                    epoch,
                    trace: trace
                        .into_iter()
                        .map(|r| EpochRecord { epoch: r.epoch, lr: r.lr, train_mse: r.train_mse, val_mse: r.val_mse, wall_seconds: None })
                        .collect(),
                };
                ModelState::Network { graph, state }
            }
            ModelMeta::Krr { kernel, lambda } => {
                let (Some(centers), Some(coefficients)) = (tensors.get("centers"), tensors.get("coefficients")) else {
                    return Err(Error::format("kernel model checkpoint lacks centers or coefficients"));
                };
                ModelState::Krr(KrrModel { kernel, centers: centers.clone(), coefficients: coefficients.clone(), lambda })
            }
        };
        Ok(Self { config: meta.config, dataset_id: meta.dataset_id, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Content hash identifying the trained model.
    pub fn model_id(&self) -> String {
        content_id(&self.to_bytes())
    }
}
