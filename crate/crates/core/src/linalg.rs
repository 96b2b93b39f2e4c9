//! Small dense solvers used by kernel ridge regression and layer initialization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes `a` (n x n, row major). Fails when a pivot is not
    /// positive, i.e. the matrix is not numerically SPD.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::numeric(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e}); use a positive regularization"
                )));
            }
            let djj = diag.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` in place for one right-hand side.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A X = B` for an `n x r` right-hand side.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        if b.rank() != 2 || b.shape()[0] != self.n {
            return Err(Error::config(format!(
                "right-hand side {:?} does not match a {n} x {n} system",
                b.shape(),
                n = self.n
            )));
        }
        let cols = b.shape()[1];
        let mut out = b.clone();
        let mut col = vec![0.0; self.n];
        for c in 0..cols {
            for (i, v) in col.iter_mut().enumerate() {
                *v = b.at(i, c);
            }
            self.solve_in_place(&mut col);
            for (i, v) in col.iter().enumerate() {
                out.set(i, c, *v);
            }
        }
        Ok(out)
    }
}

/// Minimizes `|K a - y|^2 + ridge |a|^2` for a square or tall `K` (rows x cols).
pub fn ridge_least_squares(k: &[f64], rows: usize, cols: usize, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let mut normal = vec![0.0; cols * cols];
    let mut rhs = vec![0.0; cols];
    for r in 0..rows {
        let row = &k[r * cols..(r + 1) * cols];
        for i in 0..cols {
            rhs[i] += row[i] * y[r];
            for j in 0..cols {
                normal[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        normal[i * cols + i] += ridge;
    }
    let chol = Cholesky::factor(&normal, cols)?;
    chol.solve_in_place(&mut rhs);
    Ok(rhs)
}

/// Inverse of a general square matrix by Gaussian elimination with partial pivoting.
pub fn invert(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .expect("non-empty range");
        if m[pivot * n + col].abs() < 1e-300 {
            return Err(Error::numeric("matrix is singular"));
        }
        for j in 0..n {
            m.swap(col * n + j, pivot * n + j);
            inv.swap(col * n + j, pivot * n + j);
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Ok(inv)
}
