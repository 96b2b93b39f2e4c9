#![allow(dead_code)]

use sdkn::model::ModelGraph;
use sdkn::{ParamStore, SplitMix64, Tensor};

pub fn uniform_tensor(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Every parameter of `graph` drawn from `U(lo, hi)`.
pub fn random_params(graph: &ModelGraph, rng: &mut SplitMix64, lo: f64, hi: f64) -> ParamStore {
    let mut p = ParamStore::new();
    for (name, shape) in graph.param_shapes() {
        p.insert(name, uniform_tensor(rng, &shape, lo, hi)).unwrap();
    }
    p
}

/// Small dense Gaussian elimination with partial pivoting, independent of the crate's solvers.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut r = r.clone();
        r.push(v);
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// One parameter entry compared against a central difference.
#[derive(Debug)]
pub struct EntryCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub value: f64,
}

impl EntryCheck {
    pub fn relative(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.numeric.abs() + 1e-12)
    }

    /// Relative error, or an absolute floor of a few ulps of `f` divided by the step.
    ///
    /// Entries whose true gradient is near zero cannot meet a relative bound with
    /// a 1e-6 step since `f(w+h) - f(w-h)` is then pure roundoff.
    pub fn passes(&self, rel: f64, step: f64) -> bool {
        let floor = 16.0 * f64::EPSILON * self.value.abs().max(1.0) / step;
        self.relative() < rel || (self.analytic - self.numeric).abs() < floor
    }
}

/// Entry-by-entry central differences, written independently of the crate's checker.
pub fn entrywise_check<F>(f: F, params: &ParamStore, step: f64) -> Vec<EntryCheck>
where
    F: Fn(&mut sdkn::Tape, &ParamStore) -> sdkn::Result<sdkn::Var>,
{
    let eval = |p: &ParamStore| {
        let mut t = sdkn::Tape::new();
        let v = f(&mut t, p).unwrap();
        t.value(v).item()
    };
    let mut grads = params.clone();
    let mut tape = sdkn::Tape::new();
    let out = f(&mut tape, &grads).unwrap();
    let value = tape.value(out).item();
    tape.backward(out, &mut grads).unwrap();
    let mut checks = Vec::new();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        for index in 0..params.value(&name).unwrap().len() {
            let orig = params.value(&name).unwrap().data()[index];
            probe.value_mut(&name).unwrap().data_mut()[index] = orig + step;
            let up = eval(&probe);
            probe.value_mut(&name).unwrap().data_mut()[index] = orig - step;
            let down = eval(&probe);
            probe.value_mut(&name).unwrap().data_mut()[index] = orig;
            let analytic = grads.grad(&name).unwrap().data()[index];
            checks.push(EntryCheck { name: name.clone(), index, analytic, numeric: (up - down) / (2.0 * step), value });
        }
    }
    checks
}
