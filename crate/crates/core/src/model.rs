//! Model blocks and their composition.
//!
//! A structured deep kernel network alternates two block types:
//!
//! - [`Block::LinearKernel`]: the vector-valued linear kernel
//!   `k(x, z) = <x, z> I` turns a sparse kernel expansion into `x -> W x`
//!   without bias.
//! - [`Block::ActivationKernel`]: a diagonal kernel acting on each coordinate
//!   separately, `out_i = sum_m A[i, m] k(x_i, C[i, m])`, i.e. a trainable
//!   activation function with `M` centers per coordinate.
//!
//! A GRU block may sit anywhere in the chain and consumes the time axis;
//! blocks before it are applied per time instance, blocks after it see the
//! final hidden state. Dense ReLU layers build the neural-network baseline
//! on the same graph machinery.
//!
//! Parameters live in a [`ParamStore`] under `block{index}.{name}`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, KernelFamily, KernelSpec};
use crate::linalg::{ridge_least_squares, Cholesky};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Tikhonov term for the identity fit of activation-layer coefficients.
///
/// Centers drawn from data can nearly coincide, which makes the `M x M`
/// kernel matrix close to singular.
pub const IDENTITY_FIT_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Block {
    LinearKernel { d_in: usize, d_out: usize },
    ActivationKernel { dim: usize, m: usize, kernel: KernelSpec },
    Gru { input: usize, hidden: usize },
    Dense { d_in: usize, d_out: usize, activation: Activation },
}

impl Block {
    pub fn in_dim(&self) -> usize {
        match *self {
            Block::LinearKernel { d_in, .. } | Block::Dense { d_in, .. } => d_in,
            Block::ActivationKernel { dim, .. } => dim,
            Block::Gru { input, .. } => input,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            Block::LinearKernel { d_out, .. } | Block::Dense { d_out, .. } => d_out,
            Block::ActivationKernel { dim, .. } => dim,
            Block::Gru { hidden, .. } => hidden,
        }
    }

    pub fn is_gru(&self) -> bool {
        matches!(self, Block::Gru { .. })
    }

    pub fn count_parameters(&self) -> usize {
        match *self {
            Block::LinearKernel { d_in, d_out } => d_in * d_out,
            Block::Dense { d_in, d_out, .. } => d_in * d_out + d_out,
            Block::ActivationKernel { dim, m, .. } => 2 * dim * m,
            Block::Gru { input, hidden } => 3 * (hidden * input + hidden * hidden + hidden),
        }
    }

    fn set_in_dim(&mut self, d: usize) {
        match self {
            Block::LinearKernel { d_in, .. } | Block::Dense { d_in, .. } => *d_in = d,
            Block::ActivationKernel { dim, .. } => *dim = d,
            Block::Gru { input, .. } => *input = d,
        }
    }
}

pub fn param_name(block: usize, name: &str) -> String {
    format!("block{block}.{name}")
}

/// Dimensions of a GRU cell; its weights live in a [`ParamStore`].
///
/// Gate convention, for `t = 1..N`:
///
/// ```text
/// z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
/// r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
/// g_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
/// h_t = (1 - z_t) * h_{t-1} + z_t * g_t
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self { input, hidden }
    }

    /// Final hidden state for a `B x N x input` sequence starting from `h0` (`B x hidden`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        prefix: &str,
        sequence: Var,
        h0: Var,
    ) -> Result<Var> {
        let shape = tape.value(sequence).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input {
            return Err(Error::config(format!(
                "GRU expects a B x N x {} sequence, got {shape:?}",
                self.input
            )));
        }
        let (batch, steps) = (shape[0], shape[1]);
        let hs = tape.value(h0).shape();
        if hs != [batch, self.hidden] {
            return Err(Error::config(format!(
                "GRU initial state must be {batch} x {}, got {hs:?}",
                self.hidden
            )));
        }
        let h = self.hidden;
        let name = |n: &str| format!("{prefix}.{n}");
        let flat = tape.reshape(sequence, &[batch * steps, self.input])?;
        // Input projections for all time instances at once.
        let mut projected = Vec::with_capacity(3);
        for gate in ["W_z", "W_r", "W_h"] {
            let w = tape.param(params, &name(gate))?;
            let wt = tape.transpose(w)?;
            let p = tape.matmul(flat, wt)?;
            projected.push(tape.reshape(p, &[batch, steps, h])?);
        }
        let mut recurrent = Vec::with_capacity(3);
        for gate in ["U_z", "U_r", "U_h"] {
            let u = tape.param(params, &name(gate))?;
            recurrent.push(tape.transpose(u)?);
        }
        let bz = tape.param(params, &name("b_z"))?;
        let br = tape.param(params, &name("b_r"))?;
        let bh = tape.param(params, &name("b_h"))?;

        let mut state = h0;
        for t in 0..steps {
            let at = |tape: &mut Tape, p: Var| -> Result<Var> {
                let s = tape.slice(p, 1, t, t + 1)?;
                tape.reshape(s, &[batch, h])
            };
            let xz = at(tape, projected[0])?;
            let xr = at(tape, projected[1])?;
            let xh = at(tape, projected[2])?;

            let hz = tape.matmul(state, recurrent[0])?;
            let z = tape.add(xz, hz)?;
            let z = tape.add_bias(z, bz)?;
            let z = tape.sigmoid(z);

            let hr = tape.matmul(state, recurrent[1])?;
            let r = tape.add(xr, hr)?;
            let r = tape.add_bias(r, br)?;
            let r = tape.sigmoid(r);

            let rh = tape.mul(r, state)?;
            let hh = tape.matmul(rh, recurrent[2])?;
            let cand = tape.add(xh, hh)?;
            let cand = tape.add_bias(cand, bh)?;
            let cand = tape.tanh(cand);

            let delta = tape.sub(cand, state)?;
            let step = tape.mul(z, delta)?;
            state = tape.add(state, step)?;
        }
        Ok(state)
    }

    /// Untaped convenience wrapper around [`GruCell::forward`].
    pub fn run(&self, params: &ParamStore, prefix: &str, sequence: &Tensor, h0: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = tape.constant(sequence.clone());
        let h = tape.constant(h0.clone());
        let out = self.forward(&mut tape, params, prefix, s, h)?;
        Ok(tape.value(out).clone())
    }

    /// Registers zero-valued weights under `prefix`.
    pub fn insert_zeros(&self, params: &mut ParamStore, prefix: &str) -> Result<()> {
        let (i, h) = (self.input, self.hidden);
        for g in ["z", "r", "h"] {
            params.insert(format!("{prefix}.W_{g}"), Tensor::zeros(&[h, i]))?;
            params.insert(format!("{prefix}.U_{g}"), Tensor::zeros(&[h, h]))?;
            params.insert(format!("{prefix}.b_{g}"), Tensor::zeros(&[h]))?;
        }
        Ok(())
    }
}

/// Where to put a GRU when building a graph from a layer-width list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruPlacement {
    pub hidden: usize,
    /// Index in the block list at which the GRU is inserted.
    #[serde(default = "default_gru_position")]
    pub position: usize,
}

fn default_gru_position() -> usize {
    1
}

/// Ordered block list with declared input and output widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGraph {
    pub d_in: usize,
    pub d_out: usize,
    pub blocks: Vec<Block>,
}

impl ModelGraph {
    /// Validated graph from an explicit block list.
    pub fn new(d_in: usize, d_out: usize, blocks: Vec<Block>) -> Result<Self> {
        let g = Self { d_in, d_out, blocks };
        g.validate()?;
        Ok(g)
    }

    /// `lin, act, lin, act, ..., lin` over the widths `dims`, with an optional GRU.
    pub fn sdkn(dims: &[usize], kernel: KernelSpec, m: usize, gru: Option<GruPlacement>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an SDKN needs at least input and output widths"));
        }
        let mut blocks = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            if l > 0 {
                blocks.push(Block::ActivationKernel { dim: w[0], m, kernel });
            }
            blocks.push(Block::LinearKernel { d_in: w[0], d_out: w[1] });
        }
        Self::with_gru(dims[0], dims[dims.len() - 1], blocks, gru)
    }

    /// Dense ReLU network over `dims` with identity output, optional GRU.
    pub fn ann(dims: &[usize], gru: Option<GruPlacement>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an ANN needs at least input and output widths"));
        }
        let last = dims.len() - 2;
        let blocks = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| Block::Dense {
                d_in: w[0],
                d_out: w[1],
                activation: if l == last { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        Self::with_gru(dims[0], dims[dims.len() - 1], blocks, gru)
    }

    fn with_gru(d_in: usize, d_out: usize, mut blocks: Vec<Block>, gru: Option<GruPlacement>) -> Result<Self> {
        if let Some(p) = gru {
            if p.position >= blocks.len() {
                return Err(Error::config(format!(
                    "GRU position {} must precede the output block (graph has {} blocks)",
                    p.position,
                    blocks.len()
                )));
            }
            let input = if p.position == 0 { d_in } else { blocks[p.position - 1].out_dim() };
            blocks.insert(p.position, Block::Gru { input, hidden: p.hidden });
            // Re-chain widths up to and including the next width-changing block.
            for b in blocks.iter_mut().skip(p.position + 1) {
                b.set_in_dim(p.hidden);
                if !matches!(b, Block::ActivationKernel { .. }) {
                    break;
                }
            }
        }
        Self::new(d_in, d_out, blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("model graph has no blocks"));
        }
        let mut width = self.d_in;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_dim() != width {
                return Err(Error::config(format!(
                    "block {i} expects width {}, previous block produces {width}",
                    b.in_dim()
                )));
            }
            if b.in_dim() == 0 || b.out_dim() == 0 {
                return Err(Error::config(format!("block {i} has a zero width")));
            }
            if let Block::ActivationKernel { m, kernel, .. } = b {
                if *m == 0 {
                    return Err(Error::config(format!("block {i}: expansion size must be positive")));
                }
                if kernel.family == KernelFamily::Linear {
                    return Err(Error::config(format!(
                        "block {i}: activation layers need a gaussian or wendland0 kernel"
                    )));
                }
                kernel.validate()?;
            }
            width = b.out_dim();
        }
        if width != self.d_out {
            return Err(Error::config(format!(
                "graph produces width {width}, declared output is {}",
                self.d_out
            )));
        }
        if self.blocks.iter().filter(|b| b.is_gru()).count() > 1 {
            return Err(Error::config("at most one GRU block is supported"));
        }
        match self.blocks.last() {
            Some(Block::LinearKernel { .. })
            | Some(Block::Dense { activation: Activation::Identity, .. }) => Ok(()),
            _ => Err(Error::config(
                "the last block must be a linear-kernel layer or an identity dense layer",
            )),
        }
    }

    pub fn gru_index(&self) -> Option<usize> {
        self.blocks.iter().position(Block::is_gru)
    }

    pub fn is_sequential(&self) -> bool {
        self.gru_index().is_some()
    }

    pub fn count_parameters(&self) -> usize {
        self.blocks.iter().map(Block::count_parameters).sum()
    }

    /// Indices of the activation-kernel blocks.
    pub fn activation_layers(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, Block::ActivationKernel { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Parameter names and shapes in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = |s: &str| param_name(i, s);
            match *b {
                Block::LinearKernel { d_in, d_out } => out.push((n("W"), vec![d_out, d_in])),
                Block::Dense { d_in, d_out, .. } => {
                    out.push((n("W"), vec![d_out, d_in]));
                    out.push((n("b"), vec![d_out]));
                }
                Block::ActivationKernel { dim, m, .. } => {
                    out.push((n("C"), vec![dim, m]));
                    out.push((n("A"), vec![dim, m]));
                }
                Block::Gru { input, hidden } => {
                    for g in ["z", "r", "h"] {
                        out.push((n(&format!("W_{g}")), vec![hidden, input]));
                        out.push((n(&format!("U_{g}")), vec![hidden, hidden]));
                        out.push((n(&format!("b_{g}")), vec![hidden]));
                    }
                }
            }
        }
        out
    }

    /// Checks that `params` holds exactly this graph's parameters.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::config(format!(
                "graph has {} parameter tensors, store has {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in shapes {
            let v = params.value(&name)?;
            if v.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, graph expects {shape:?}",
                    v.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &[usize]) -> Result<()> {
        let want_rank = if self.is_sequential() { 3 } else { 2 };
        if input.len() != want_rank || input[input.len() - 1] != self.d_in {
            let what = if self.is_sequential() {
                format!("B x N_seq x {}", self.d_in)
            } else {
                format!("B x {}", self.d_in)
            };
            return Err(Error::config(format!(
                "model expects input of shape {what}, got {input:?}"
            )));
        }
        if self.is_sequential() && input[1] == 0 {
            return Err(Error::config("sequence must contain at least one time instance"));
        }
        Ok(())
    }

    fn check_finite(&self, params: &ParamStore, upto: usize) -> Result<()> {
        let prefixes: Vec<String> = (0..upto).map(|i| format!("block{i}.")).collect();
        for (name, p) in params.iter() {
            if prefixes.iter().any(|pre| name.starts_with(pre.as_str())) && !p.value.is_finite() {
                let block = name.split('.').next().unwrap_or(name);
                return Err(Error::numeric(format!("non-finite parameter {name} in {block}")));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the `B x d_out` output.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, input: Var) -> Result<Var> {
        self.forward_upto(tape, params, input, self.blocks.len())
    }

    /// Output of blocks `0..upto`, i.e. the input of block `upto`.
    ///
    /// Before the GRU the result has one row per (sample, time instance);
    /// from the GRU on it has one row per sample.
    pub fn forward_upto(&self, tape: &mut Tape, params: &ParamStore, input: Var, upto: usize) -> Result<Var> {
        self.check_input(tape.value(input).shape())?;
        self.check_finite(params, upto)?;
        let shape = tape.value(input).shape().to_vec();
        let (batch, steps) = (shape[0], if shape.len() == 3 { shape[1] } else { 1 });
        let mut x = if shape.len() == 3 {
            tape.reshape(input, &[batch * steps, self.d_in])?
        } else {
            input
        };
        for (i, block) in self.blocks.iter().enumerate().take(upto) {
            let prefix = format!("block{i}");
            x = match *block {
                Block::LinearKernel { .. } => {
                    let w = tape.param(params, &param_name(i, "W"))?;
                    let wt = tape.transpose(w)?;
                    tape.matmul(x, wt)?
                }
                Block::Dense { activation, .. } => {
                    let w = tape.param(params, &param_name(i, "W"))?;
                    let b = tape.param(params, &param_name(i, "b"))?;
                    let wt = tape.transpose(w)?;
                    let y = tape.matmul(x, wt)?;
                    let y = tape.add_bias(y, b)?;
                    match activation {
                        Activation::Relu => tape.relu(y),
                        Activation::Identity => y,
                    }
                }
                Block::ActivationKernel { kernel, .. } => {
                    let c = tape.param(params, &param_name(i, "C"))?;
                    let a = tape.param(params, &param_name(i, "A"))?;
                    tape.kernel_expansion(x, c, a, kernel)?
                }
                Block::Gru { input, hidden } => {
                    let seq = tape.reshape(x, &[batch, steps, input])?;
                    let h0 = tape.constant(Tensor::zeros(&[batch, hidden]));
                    GruCell::new(input, hidden).forward(tape, params, &prefix, seq, h0)?
                }
            };
        }
        Ok(x)
    }

    /// Untaped inference on a batch.
    pub fn predict(&self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, params, x)?;
        let out = tape.value(y).clone();
        if !out.is_finite() {
            return Err(Error::numeric("model output is not finite"));
        }
        Ok(out)
    }

    /// Representation entering block `upto`, usable as a kernel feature map.
    pub fn features(&self, params: &ParamStore, input: &Tensor, upto: usize) -> Result<Tensor> {
        if upto > self.blocks.len() {
            return Err(Error::usage(format!("graph has only {} blocks", self.blocks.len())));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward_upto(&mut tape, params, x, upto)?;
        Ok(tape.value(y).clone())
    }
}

/// Data-dependent, seeded initialization.
///
/// Weight matrices are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// biases start at zero. Each activation-kernel layer takes its centers from
/// `M` distinct `init_batch` samples pushed through the blocks before it, and
/// its coefficients from the least-squares fit that makes the layer the
/// identity on those centers.
pub fn init_params(graph: &ModelGraph, seed: u64, init_batch: &Tensor) -> Result<ParamStore> {
    graph.validate()?;
    graph.check_input(init_batch.shape())?;
    let samples = init_batch.shape()[0];
    let mut rng = SplitMix64::new(seed);
    let mut params = ParamStore::new();
    for (i, block) in graph.blocks.iter().enumerate() {
        let uniform = |rng: &mut SplitMix64, rows: usize, cols: usize| -> Tensor {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
            Tensor::new(vec![rows, cols], data).expect("positive dims")
        };
        match *block {
            Block::LinearKernel { d_in, d_out } => {
                params.insert(param_name(i, "W"), uniform(&mut rng, d_out, d_in))?;
            }
            Block::Dense { d_in, d_out, .. } => {
                params.insert(param_name(i, "W"), uniform(&mut rng, d_out, d_in))?;
                params.insert(param_name(i, "b"), Tensor::zeros(&[d_out]))?;
            }
            Block::Gru { input, hidden } => {
                for g in ["z", "r", "h"] {
                    params.insert(param_name(i, &format!("W_{g}")), uniform(&mut rng, hidden, input))?;
                    params.insert(param_name(i, &format!("U_{g}")), uniform(&mut rng, hidden, hidden))?;
                    params.insert(param_name(i, &format!("b_{g}")), Tensor::zeros(&[hidden]))?;
                }
            }
            Block::ActivationKernel { dim, m, kernel } => {
                if samples < m {
                    return Err(Error::config(format!(
                        "block {i} needs {m} initialization samples, got {samples}"
                    )));
                }
                let chosen = rng.choose_distinct(samples, m);
                let subset = init_batch.gather_rows(&chosen);
                let reps = graph.features(&params, &subset, i)?;
                // Pre-GRU layers see one row per time instance; use the last one.
                let per_sample = reps.shape()[0] / m;
                let mut centers = Tensor::zeros(&[dim, m]);
                for (j, _) in chosen.iter().enumerate() {
                    let row = reps.row(j * per_sample + per_sample - 1);
                    for (d, v) in row.iter().enumerate() {
                        centers.set(d, j, *v);
                    }
                }
                let coeffs = identity_fit(&kernel, &centers)?;
                params.insert(param_name(i, "C"), centers)?;
                params.insert(param_name(i, "A"), coeffs)?;
            }
        }
    }
    Ok(params)
}

/// Per coordinate, coefficients `a` minimizing `|K a - c|^2 + ridge |a|^2`
/// with `K[p, q] = k(c_p, c_q)`, so that the expansion maps each center to itself.
pub fn identity_fit(kernel: &KernelSpec, centers: &Tensor) -> Result<Tensor> {
    let (dim, m) = (centers.shape()[0], centers.shape()[1]);
    let mut coeffs = Tensor::zeros(&[dim, m]);
    for d in 0..dim {
        let c = centers.row(d);
        let mut k = vec![0.0; m * m];
        for p in 0..m {
            for q in 0..m {
                k[p * m + q] = kernel.eval_scalar(c[p], c[q])?;
            }
        }
        let a = ridge_least_squares(&k, m, m, c, IDENTITY_FIT_RIDGE)?;
        for (q, v) in a.into_iter().enumerate() {
            coeffs.set(d, q, v);
        }
    }
    Ok(coeffs)
}

/// Shallow kernel model `f(x) = sum_j alpha_j k(x, x_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KrrModel {
    pub kernel: KernelSpec,
    pub centers: Tensor,
    pub coefficients: Tensor,
    pub lambda: f64,
}

impl KrrModel {
    /// Solves `(K + lambda n I) alpha = Y` by Cholesky factorization.
    pub fn fit(kernel: KernelSpec, x: &Tensor, y: &Tensor, lambda: f64) -> Result<Self> {
        kernel.validate()?;
        if x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0] {
            return Err(Error::config(format!(
                "krr_fit needs n x d inputs and n x d_out targets, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::config(format!("regularization must be non-negative, got {lambda}")));
        }
        let n = x.shape()[0];
        let mut k = gram_matrix(&kernel, x, x)?;
        for i in 0..n {
            let v = k.at(i, i) + lambda * n as f64;
            k.set(i, i, v);
        }
        let chol = Cholesky::factor(k.data(), n)?;
        let mut alpha = chol.solve(y)?;
        let cols = y.shape()[1];
        let residuals = |alpha: &Tensor| -> Tensor {
            let mut r = y.clone();
            for i in 0..n {
                for c in 0..cols {
                    let s: f64 = (0..n).map(|j| k.at(i, j) * alpha.at(j, c)).sum();
                    r.set(i, c, y.at(i, c) - s);
                }
            }
            r
        };
        // Iterative refinement recovers accuracy lost to an ill-conditioned Gram matrix.
        let mut r = residuals(&alpha);
        for _ in 0..3 {
            let delta = chol.solve(&r)?;
            let mut next = alpha.clone();
            next.data_mut().iter_mut().zip(delta.data()).for_each(|(a, d)| *a += d);
            let rn = residuals(&next);
            if rn.max_abs() >= r.max_abs() {
                break;
            }
            alpha = next;
            r = rn;
        }
        let residual = r.max_abs();
        if !(residual < 1e-8 * y.max_abs().max(1.0)) {
            return Err(Error::numeric(format!(
                "kernel system is numerically singular (residual {residual:e}); use a positive regularization"
            )));
        }
        Ok(Self { kernel, centers: x.clone(), coefficients: alpha, lambda })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let k = gram_matrix(&self.kernel, x, &self.centers)?;
        let (n, m, cols) = (k.shape()[0], k.shape()[1], self.coefficients.shape()[1]);
        let mut out = vec![0.0; n * cols];
        crate::tensor::gemm(k.data(), false, self.coefficients.data(), false, n, m, cols, &mut out);
        Tensor::new(vec![n, cols], out)
    }
}
