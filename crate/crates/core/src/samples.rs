//! Paired input/target tensors addressed by sample index.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `inputs` is `n x N_seq x d_in` (or `n x d_in`), `targets` is `n x d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl SampleSet {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        if inputs.rank() < 2 || targets.rank() != 2 || inputs.shape()[0] != targets.shape()[0] {
            return Err(Error::config(format!(
                "inputs {:?} and targets {:?} disagree on the sample count",
                inputs.shape(),
                targets.shape()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_out(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        (self.inputs.gather_rows(idx), self.targets.gather_rows(idx))
    }

    /// Inputs with the time axis folded into the feature axis (`n x (N_seq d_in)`).
    pub fn flat_inputs(&self) -> Tensor {
        let n = self.len();
        let width = self.inputs.len() / n;
        self.inputs.reshape(&[n, width]).expect("same element count")
    }
}
