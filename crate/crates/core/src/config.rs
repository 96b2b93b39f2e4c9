//! Declarative experiment description read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::dataset::Schedule;
use crate::data::{DatasetConfig, Filter};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{Block, GruPlacement, ModelGraph};
use crate::trainer::TrainConfig;

fn default_m() -> usize {
    5
}

fn default_kernel() -> KernelSpec {
    KernelSpec::gaussian(1.0)
}

fn default_max_centers() -> usize {
    2000
}

/// Representation fed to a kernel ridge regressor in place of the raw inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMap {
    /// Trained network checkpoint.
    pub checkpoint: PathBuf,
    /// Features are the input of this block index.
    pub block: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Sdkn {
        dims: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: KernelSpec,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default)]
        gru: Option<GruPlacement>,
    },
    Ann {
        dims: Vec<usize>,
        #[serde(default)]
        gru: Option<GruPlacement>,
    },
    /// Explicit block list.
    Blocks { d_in: usize, d_out: usize, blocks: Vec<Block> },
    Krr {
        #[serde(default = "default_kernel")]
        kernel: KernelSpec,
        lambda: f64,
        /// Training samples used as centers (the first ones after a seeded shuffle).
        #[serde(default = "default_max_centers")]
        max_centers: usize,
        #[serde(default)]
        features: Option<FeatureMap>,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Sdkn { .. } => "sdkn",
            ModelConfig::Ann { .. } => "ann",
            ModelConfig::Blocks { .. } => "blocks",
            ModelConfig::Krr { .. } => "krr",
        }
    }

    /// Network graph; `None` for kernel ridge regression.
    pub fn graph(&self) -> Result<Option<ModelGraph>> {
        let g = match self {
            ModelConfig::Sdkn { dims, kernel, m, gru } => {
                kernel.validate()?;
                ModelGraph::sdkn(dims, *kernel, *m, *gru)?
            }
            ModelConfig::Ann { dims, gru } => ModelGraph::ann(dims, *gru)?,
            ModelConfig::Blocks { d_in, d_out, blocks } => ModelGraph::new(*d_in, *d_out, blocks.clone())?,
            ModelConfig::Krr { .. } => return Ok(None),
        };
        Ok(Some(g))
    }
}

fn default_init_samples() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: Option<TrainConfig>,
    /// Training samples propagated to place the activation-kernel centers.
    #[serde(default = "default_init_samples")]
    pub init_samples: usize,
    /// Write `checkpoint_epoch_<k>.bin` every this many epochs (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
}

fn path_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        Error::config(format!("malformed JSON: {inner}"))
    } else {
        Error::config(format!("at `{path}`: {inner}"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(path_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Input width the network sees: `d_in` per step with a GRU, the
    /// flattened series without one.
    pub fn network_input_dim(&self, graph: &ModelGraph) -> usize {
        if graph.is_sequential() {
            1
        } else {
            self.dataset.strategy.n_seq()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        d.dns.validate()?;
        d.splits.validate()?;
        Filter::new(d.filter, d.dns.n)?;
        Schedule::new(&d.dns, d.strategy, &d.final_times)?;
        let graph = self.model.graph().map_err(|e| Error::config(format!("model: {e}")))?;
        match (&graph, &self.trainer) {
            (Some(g), Some(t)) => {
                t.validate()?;
                let want = self.network_input_dim(g);
                if g.d_in != want || g.d_out != 1 {
                    return Err(Error::config(format!(
                        "model: graph maps {} -> {}, the dataset needs {want} -> 1",
                        g.d_in, g.d_out
                    )));
                }
                if self.init_samples == 0 {
                    return Err(Error::config("init_samples must be positive"));
                }
            }
            (Some(_), None) => return Err(Error::config("trainer: required for network models")),
            (None, _) => {
                if let ModelConfig::Krr { kernel, lambda, max_centers, .. } = &self.model {
                    kernel.validate()?;
                    if !(*lambda >= 0.0) {
                        return Err(Error::config("model.lambda must be non-negative"));
                    }
                    if *max_centers == 0 {
                        return Err(Error::config("model.max_centers must be positive"));
                    }
                }
            }
        }
        Ok(())
    }
}
