//! Structured deep kernel networks for closure-term regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation and [`ParamStore`].
//! - [`kernels`]: Gaussian, Wendland and linear kernels.
//! - [`model`]: kernel layers, GRU cell, dense layers, [`ModelGraph`] and the
//!   shallow kernel ridge baseline.
//! - [`trainer`]: MSE loss, Adam, step-halving schedule and the epoch loop.
//! - [`data`]: 1D Burgers DNS, LES filters, closure terms and datasets.
//! - [`metrics`]: MSE, Pearson cross-correlation and activation profiles.
//! - [`checkpoint`] and [`config`]: on-disk formats shared with the CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod samples;
pub mod tensor;
pub mod trainer;

pub use autodiff::{finite_difference_check, ParamStore, Tape, Var};
pub use checkpoint::{Checkpoint, ModelState};
pub use config::{ExperimentConfig, ModelConfig};
pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec};
pub use model::{Block, GruCell, KrrModel, ModelGraph};
pub use rng::SplitMix64;
pub use samples::SampleSet;
pub use tensor::Tensor;
