//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records one forward pass. Each op appends a node holding its
//! value and the handles of its inputs; [`Tape::backward`] walks the nodes
//! in reverse insertion order, which is a reverse topological order because
//! inputs always precede their consumers. The tape is consumed by the
//! backward pass.
//!
//! Trainable tensors live in a [`ParamStore`]. [`Tape::param`] copies a
//! parameter onto the tape and remembers its name so the backward pass can
//! write gradients back into the store.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Op identifiers, used by [`Tape::apply`] and in error messages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddBias,
    Affine { scale: f64, shift: f64 },
    Exp,
    Tanh,
    Sigmoid,
    MaxConst(f64),
    Abs,
    Square,
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaxConst(Var, f64),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Slice { input: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    KernelExpansion { x: Var, centers: Var, coeffs: Var, kernel: KernelSpec },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// A trainable tensor and its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::config(format!(
                "parameter {name} has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Sum of squared entries over all parameter values.
    pub fn squared_norm(&self) -> f64 {
        self.entries.values().flat_map(|p| p.value.data()).map(|v| v * v).sum()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::config(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a copy of a named parameter.
    pub fn param(&mut self, params: &ParamStore, name: &str) -> Result<Var> {
        let value = params.value(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Generic entry point for the single- and two-input primitives.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddBias => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::usage(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let a = inputs[0];
        Ok(match kind {
            OpKind::MatMul => self.matmul(a, inputs[1])?,
            OpKind::Add => self.add(a, inputs[1])?,
            OpKind::Sub => self.sub(a, inputs[1])?,
            OpKind::Mul => self.mul(a, inputs[1])?,
            OpKind::AddBias => self.add_bias(a, inputs[1])?,
            OpKind::Transpose => self.transpose(a)?,
            OpKind::Affine { scale, shift } => self.affine(a, scale, shift),
            OpKind::Exp => self.exp(a),
            OpKind::Tanh => self.tanh(a),
            OpKind::Sigmoid => self.sigmoid(a),
            OpKind::MaxConst(c) => self.max_const(a, c),
            OpKind::Abs => self.abs(a),
            OpKind::Square => self.square(a),
            OpKind::Sum => self.sum(a),
            OpKind::Mean => self.mean(a),
        })
    }

    /// Matrix product of an `m x k` and a `k x n` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), false, self.value(b).data(), false, m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of a `rows x n` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(shape_err("add_bias", sa, sb));
        }
        let n = sb[0];
        let mut t = self.value(a).clone();
        let b = self.value(bias).data();
        for row in t.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = map(self.value(a), |x| scale * x + shift);
        let rg = self.rg(a);
        self.push(t, Op::Affine(a, scale), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::exp);
        let rg = self.rg(a);
        self.push(t, Op::Exp(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// `max(a, c)` elementwise; the derivative at `a == c` is 0.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x.max(c));
        let rg = self.rg(a);
        self.push(t, Op::MaxConst(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.max_const(a, 0.0)
    }

    /// `|a|`; the derivative at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::abs);
        let rg = self.rg(a);
        self.push(t, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| x * x);
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Entries `start..end` along `axis`, keeping the rank.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::config(format!(
                "slice: range {start}..{end} on axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let width = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = width;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::usage("concat needs at least one input"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::config(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Componentwise kernel expansion `out[b, i] = sum_m A[i, m] k(x[b, i], C[i, m])`.
    ///
    /// `x` is `rows x d`, `centers` and `coeffs` are `d x M`.
    pub fn kernel_expansion(
        &mut self,
        x: Var,
        centers: Var,
        coeffs: Var,
        kernel: KernelSpec,
    ) -> Result<Var> {
        let (sx, sc, sa) =
            (self.value(x).shape(), self.value(centers).shape(), self.value(coeffs).shape());
        if sx.len() != 2 || sc.len() != 2 || sc != sa || sx[1] != sc[0] {
            return Err(Error::config(format!(
                "kernel_expansion: input {sx:?}, centers {sc:?}, coefficients {sa:?}"
            )));
        }
        let (rows, d, m) = (sx[0], sx[1], sc[1]);
        let (xv, cv, av) =
            (self.value(x).data(), self.value(centers).data(), self.value(coeffs).data());
        let mut out = vec![0.0; rows * d];
        for b in 0..rows {
            for i in 0..d {
                let xi = xv[b * d + i];
                let mut acc = 0.0;
                for j in 0..m {
                    acc += av[i * m + j] * kernel.radial(xi - cv[i * m + j]).0;
                }
                out[b * d + i] = acc;
            }
        }
        let rg = self.rg(x) || self.rg(centers) || self.rg(coeffs);
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::KernelExpansion { x, centers, coeffs, kernel },
            rg,
        ))
    }

    /// Differentiates `loss` and writes `d loss / d param` into `params`.
    ///
    /// Every gradient slot is overwritten; parameters that are not on the
    /// tape end up with zero gradients.
    pub fn backward(self, loss: Var, params: &mut ParamStore) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        params.zero_grads();
        let grads = self.gradients(loss);
        for (name, v) in &self.params {
            if let Some(g) = &grads[v.0] {
                let p = params
                    .entries
                    .get_mut(name)
                    .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
                for (acc, gv) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += gv;
                }
            }
        }
        Ok(())
    }

    fn gradients(&self, loss: Var) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(g.data(), false, bv.data(), true, m, n, k, &mut da);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(av.data(), true, g.data(), false, k, m, n, &mut db);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose().unwrap()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, map(g, |x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, zip(g, self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, zip(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Affine(a, scale) => self.accumulate(grads, *a, map(g, |x| x * scale)),
            Op::Exp(a) => self.accumulate(grads, *a, zip(g, out, |x, y| x * y)),
            Op::Tanh(a) => self.accumulate(grads, *a, zip(g, out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip(g, out, |x, y| x * y * (1.0 - y))),
            Op::MaxConst(a, c) => {
                let c = *c;
                let d = zip(g, self.value(*a), |x, y| if y > c { x } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = zip(g, self.value(*a), |x, y| {
                    if y > 0.0 {
                        x
                    } else if y < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, zip(g, self.value(*a), |x, y| 2.0 * x * y))
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(t.shape(), s));
            }
            Op::Slice { input, axis, start } => {
                let shape = self.value(*input).shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let width = out.shape()[*axis];
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * width * inner;
                    d[dst..dst + width * inner].copy_from_slice(&g.data()[src..src + width * inner]);
                }
                self.accumulate(grads, *input, Tensor::new(shape.to_vec(), d).unwrap());
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.value(v).shape();
                    let w = shape[*axis] * inner;
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            d.extend_from_slice(&g.data()[base..base + w]);
                        }
                        self.accumulate(grads, v, Tensor::new(shape.to_vec(), d).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, g.reshape(self.value(*a).shape()).unwrap())
            }
            Op::KernelExpansion { x, centers, coeffs, kernel } => {
                let (xv, cv, av) =
                    (self.value(*x).data(), self.value(*centers).data(), self.value(*coeffs).data());
                let (rows, d) = (out.shape()[0], out.shape()[1]);
                let m = self.value(*centers).shape()[1];
                let mut dx = vec![0.0; rows * d];
                let mut dc = vec![0.0; d * m];
                let mut da = vec![0.0; d * m];
                for b in 0..rows {
                    for i in 0..d {
                        let gi = g.data()[b * d + i];
                        if gi == 0.0 {
                            continue;
                        }
                        let xi = xv[b * d + i];
                        for j in 0..m {
                            let (k, dk) = kernel.radial(xi - cv[i * m + j]);
                            let a = av[i * m + j];
                            dx[b * d + i] += gi * a * dk;
                            dc[i * m + j] -= gi * a * dk;
                            da[i * m + j] += gi * k;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![rows, d], dx).unwrap());
                self.accumulate(grads, *centers, Tensor::new(vec![d, m], dc).unwrap());
                self.accumulate(grads, *coeffs, Tensor::new(vec![d, m], da).unwrap());
            }
        }
    }
}

/// Compares tape gradients with central differences.
///
/// `f` records a scalar on a fresh tape from the given parameters. Returns
/// the maximum over all parameter entries of
/// `|analytic - numeric| / (|numeric| + 1e-12)`.
pub fn finite_difference_check<F>(f: F, params: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, p)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::usage("finite_difference_check needs a scalar function"));
        }
        if !v.item().is_finite() {
            return Err(Error::numeric("function value is not finite"));
        }
        Ok(v.item())
    };

    let mut analytic = params.clone();
    let mut tape = Tape::new();
    let out = f(&mut tape, &analytic)?;
    tape.backward(out, &mut analytic)?;

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let n = params.value(name)?.len();
        for i in 0..n {
            let orig = params.value(name)?.data()[i];
            probe.value_mut(name)?.data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let exact = analytic.grad(name)?.data()[i];
            worst = worst.max((exact - numeric).abs() / (numeric.abs() + 1e-12));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(t2(&[vec![3.0], vec![4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0]);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn exp_and_sum() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let e = tape.exp(z);
        assert_eq!(tape.value(e).data(), &[1.0]);
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.sum(v);
        assert_eq!(tape.value(s).item(), 6.0);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("matmul") && m.contains("[2, 3]")));
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).is_err());
        let bias = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add_bias(a, bias).is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let ww = tape.mul(w, w).unwrap();
        let loss = tape.sum(ww);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_zeroes_gradients() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        params.iter_mut().for_each(|(_, p)| p.grad.data_mut().fill(7.0));
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(3.0));
        tape.backward(c, &mut params).unwrap();
        assert_eq!(params.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        assert!(matches!(tape.backward(w, &mut params), Err(Error::Usage(_))));
    }

    #[test]
    fn fd_check_square() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let err = finite_difference_check(
            |t, p| {
                let w = t.param(p, "w")?;
                let sq = t.square(w);
                Ok(t.sum(sq))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn fd_check_constant_is_zero() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![0.3, -0.2])).unwrap();
        let err =
            finite_difference_check(|t, _| Ok(t.constant(Tensor::scalar(2.5))), &params, 1e-6)
                .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn fd_check_rejects_bad_step_and_nan() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let f = |t: &mut Tape, p: &ParamStore| -> Result<Var> {
            let w = t.param(p, "w")?;
            Ok(t.sum(w))
        };
        assert!(finite_difference_check(f, &params, 0.0).is_err());
        let nan = |t: &mut Tape, _: &ParamStore| -> Result<Var> {
            Ok(t.constant(Tensor::scalar(f64::NAN)))
        };
        assert!(matches!(finite_difference_check(nan, &params, 1e-6), Err(Error::Numeric(_))));
    }

    #[test]
    fn slice_concat_reshape_roundtrip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let parts: Vec<Var> = (0..3).map(|t| tape.slice(x, 1, t, t + 1).unwrap()).collect();
        let joined = tape.concat(&parts, 1).unwrap();
        assert_eq!(tape.value(joined).data(), &data[..]);
        let s = tape.slice(x, 1, 1, 2).unwrap();
        let r = tape.reshape(s, &[2, 4]).unwrap();
        assert_eq!(tape.value(r).data(), &[4.0, 5.0, 6.0, 7.0, 16.0, 17.0, 18.0, 19.0]);
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(params.insert("w", Tensor::scalar(2.0)).is_err());
    }
}
