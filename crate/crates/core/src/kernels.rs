//! Scalar and vector-valued kernels.
//!
//! The radial kernels are written as functions of the signed offset
//! `r = x - z`, which is what the activation-kernel layer differentiates.
//! Multivariate Gram matrices use the Euclidean distance.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Wendland0,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Shape parameter of the Gaussian; ignored by the other families.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(epsilon: f64) -> Self {
        Self { family: KernelFamily::Gaussian, epsilon }
    }

    pub fn wendland0() -> Self {
        Self { family: KernelFamily::Wendland0, epsilon: 1.0 }
    }

    pub fn linear() -> Self {
        Self { family: KernelFamily::Linear, epsilon: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "kernel shape parameter must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn require_radial(&self) -> Result<()> {
        if self.family == KernelFamily::Linear {
            return Err(Error::usage(
                "the linear kernel is vector valued; scalar evaluation needs gaussian or wendland0",
            ));
        }
        Ok(())
    }

    /// `k(x, z)` for scalar arguments.
    pub fn eval_scalar(&self, x: f64, z: f64) -> Result<f64> {
        self.require_radial()?;
        Ok(self.radial(x - z).0)
    }

    /// Kernel value and derivative with respect to the offset `r = x - z`.
    ///
    /// Wendland0 takes derivative 0 at `r = 0` and at `|r| = 1`.
    pub(crate) fn radial(&self, r: f64) -> (f64, f64) {
        match self.family {
            KernelFamily::Gaussian => {
                let e2 = self.epsilon * self.epsilon;
                let k = (-e2 * r * r).exp();
                (k, -2.0 * e2 * r * k)
            }
            KernelFamily::Wendland0 => {
                let a = r.abs();
                if a < 1.0 {
                    let d = if r > 0.0 {
                        -1.0
                    } else if r < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    (1.0 - a, d)
                } else {
                    (0.0, 0.0)
                }
            }
            KernelFamily::Linear => (r, 1.0),
        }
    }

    /// Value from a Euclidean distance.
    fn of_distance(&self, dist: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-(self.epsilon * dist).powi(2)).exp(),
            KernelFamily::Wendland0 => (1.0 - dist).max(0.0),
            KernelFamily::Linear => unreachable!("linear kernel has no distance form"),
        }
    }

    /// Records `k(x, z)` elementwise on the tape from primitive ops.
    pub fn eval_on_tape(&self, tape: &mut Tape, x: Var, z: Var) -> Result<Var> {
        self.require_radial()?;
        let diff = tape.sub(x, z)?;
        Ok(match self.family {
            KernelFamily::Gaussian => {
                let sq = tape.square(diff);
                let scaled = tape.affine(sq, -self.epsilon * self.epsilon, 0.0);
                tape.exp(scaled)
            }
            KernelFamily::Wendland0 => {
                let a = tape.abs(diff);
                let lin = tape.affine(a, -1.0, 1.0);
                tape.max_const(lin, 0.0)
            }
            KernelFamily::Linear => unreachable!(),
        })
    }
}

/// `K[i, j] = k(X_i, Z_j)` for the rows of `x` (n x d) and `z` (m x d).
pub fn gram_matrix(spec: &KernelSpec, x: &Tensor, z: &Tensor) -> Result<Tensor> {
    spec.require_radial()?;
    spec.validate()?;
    if x.rank() != 2 || z.rank() != 2 || x.shape()[1] != z.shape()[1] {
        return Err(Error::config(format!(
            "gram_matrix needs n x d and m x d inputs, got {:?} and {:?}",
            x.shape(),
            z.shape()
        )));
    }
    let (n, m) = (x.shape()[0], z.shape()[0]);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            let d2: f64 = xi.iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(spec.of_distance(d2.sqrt()));
        }
    }
    Tensor::new(vec![n, m], out)
}
