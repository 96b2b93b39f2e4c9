//! Fine-to-coarse LES filters and their lift maps back to the fine grid.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{Flux, Spectral};
use crate::error::{Error, Result};
use crate::linalg::{invert, Cholesky};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    /// Zero all modes above `k_c`, then sample every `N / n_c` points.
    FourierCutoff { n_c: usize, k_c: usize },
    /// Mean over each block of `N / n_c` fine cells.
    TopHat { n_c: usize },
    /// Per-element least-squares fit by degree-`p` Legendre polynomials,
    /// read off at `p + 1` equispaced nodes per element.
    L2Projection { n_c: usize, p: usize },
}

impl FilterSpec {
    pub fn n_c(&self) -> usize {
        match *self {
            FilterSpec::FourierCutoff { n_c, .. } | FilterSpec::TopHat { n_c } | FilterSpec::L2Projection { n_c, .. } => n_c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterSpec::FourierCutoff { .. } => "fourier_cutoff",
            FilterSpec::TopHat { .. } => "top_hat",
            FilterSpec::L2Projection { .. } => "l2_projection",
        }
    }
}

/// Legendre polynomials `P_0..=P_p` at `x`.
fn legendre(x: f64, p: usize) -> Vec<f64> {
    let mut out = vec![1.0; p + 1];
    if p >= 1 {
        out[1] = x;
    }
    for k in 1..p {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
    out
}

fn vandermonde(points: &[f64], p: usize) -> Vec<f64> {
    points.iter().flat_map(|&x| legendre(x, p)).collect()
}

fn cell_centers(m: usize) -> Vec<f64> {
    (0..m).map(|i| (i as f64 + 0.5) / m as f64 * 2.0 - 1.0).collect()
}

enum Kind {
    Fourier { k_c: usize, fine: Spectral, coarse: Spectral },
    TopHat,
    /// `project` is `(p+1) x m`, `lift` is `m x (p+1)`, both per element.
    Projection { nodes: usize, m: usize, project: Vec<f64>, lift: Vec<f64> },
}

pub struct Filter {
    spec: FilterSpec,
    n: usize,
    n_c: usize,
    kind: Kind,
}

impl Filter {
    pub fn new(spec: FilterSpec, n: usize) -> Result<Self> {
        let n_c = spec.n_c();
        if n_c == 0 || n_c > n || n % n_c != 0 {
            return Err(Error::config(format!("filter n_c = {n_c} must divide the fine grid size {n}")));
        }
        let kind = match spec {
            FilterSpec::FourierCutoff { k_c, .. } => {
                if k_c > n_c / 2 {
                    return Err(Error::config(format!("filter k_c = {k_c} exceeds n_c / 2 = {}", n_c / 2)));
                }
                Kind::Fourier { k_c, fine: Spectral::new(n), coarse: Spectral::new(n_c) }
            }
            FilterSpec::TopHat { .. } => Kind::TopHat,
            FilterSpec::L2Projection { p, .. } => {
                let nodes = p + 1;
                if n_c % nodes != 0 {
                    return Err(Error::config(format!(
                        "projection filter needs p + 1 = {nodes} to divide n_c = {n_c}"
                    )));
                }
                let m = n / (n_c / nodes);
                if m < nodes {
                    return Err(Error::config("projection filter elements hold fewer fine points than p + 1"));
                }
                let v = vandermonde(&cell_centers(m), p);
                let vn = vandermonde(&cell_centers(nodes), p);
                let mut gram = vec![0.0; nodes * nodes];
                for r in 0..m {
                    for i in 0..nodes {
                        for j in 0..nodes {
                            gram[i * nodes + j] += v[r * nodes + i] * v[r * nodes + j];
                        }
                    }
                }
                let chol = Cholesky::factor(&gram, nodes)?;
                // modal = (V^T V)^-1 V^T, (p+1) x m
                let mut modal = vec![0.0; nodes * m];
                let mut col = vec![0.0; nodes];
                for r in 0..m {
                    col.copy_from_slice(&v[r * nodes..(r + 1) * nodes]);
                    chol.solve_in_place(&mut col);
                    for i in 0..nodes {
                        modal[i * m + r] = col[i];
                    }
                }
                let mut project = vec![0.0; nodes * m];
                for a in 0..nodes {
                    for r in 0..m {
                        project[a * m + r] = (0..nodes).map(|i| vn[a * nodes + i] * modal[i * m + r]).sum();
                    }
                }
                let vn_inv = invert(&vn, nodes)?;
                let mut lift = vec![0.0; m * nodes];
                for r in 0..m {
                    for a in 0..nodes {
                        lift[r * nodes + a] = (0..nodes).map(|i| v[r * nodes + i] * vn_inv[i * nodes + a]).sum();
                    }
                }
                Kind::Projection { nodes, m, project, lift }
            }
        };
        Ok(Self { spec, n, n_c, kind })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn fine_size(&self) -> usize {
        self.n
    }

    pub fn coarse_size(&self) -> usize {
        self.n_c
    }

    fn check_len(&self, len: usize, expected: usize, what: &str) -> Result<()> {
        if len != expected {
            return Err(Error::config(format!("{what} has length {len}, expected {expected}")));
        }
        Ok(())
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len(), self.n, "filter input")?;
        let stride = self.n / self.n_c;
        Ok(match &self.kind {
            Kind::Fourier { k_c, fine, .. } => {
                let mut spec = fine.forward(u);
                for (i, c) in spec.iter_mut().enumerate() {
                    if fine.wavenumber(i).abs() > *k_c as f64 {
                        *c = Complex64::new(0.0, 0.0);
                    }
                }
                fine.inverse(spec).into_iter().step_by(stride).collect()
            }
            Kind::TopHat => u.chunks(stride).map(|c| c.iter().sum::<f64>() / stride as f64).collect(),
            Kind::Projection { nodes, m, project, .. } => {
                let mut out = Vec::with_capacity(self.n_c);
                for elem in u.chunks(*m) {
                    for a in 0..*nodes {
                        out.push(project[a * m..(a + 1) * m].iter().zip(elem).map(|(p, v)| p * v).sum());
                    }
                }
                out
            }
        })
    }

    /// Fine-grid representative of a coarse field: trigonometric interpolation,
    /// piecewise constants, or the per-element polynomial through the nodes.
    pub fn lift(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        self.check_len(coarse.len(), self.n_c, "lift input")?;
        let stride = self.n / self.n_c;
        Ok(match &self.kind {
            Kind::Fourier { fine, coarse: cs, .. } => {
                let c_hat = cs.forward(coarse);
                let mut f_hat = vec![Complex64::new(0.0, 0.0); self.n];
                let scale = stride as f64;
                let nc = self.n_c;
                for (i, c) in c_hat.iter().enumerate() {
                    let k = cs.wavenumber(i);
                    if nc % 2 == 0 && i == nc / 2 && nc < self.n {
                        f_hat[nc / 2] = 0.5 * scale * c;
                        f_hat[self.n - nc / 2] = 0.5 * scale * c;
                    } else {
                        let j = if k < 0.0 { self.n - (-k) as usize } else { k as usize };
                        f_hat[j] = scale * c;
                    }
                }
                fine.inverse(f_hat)
            }
            Kind::TopHat => coarse.iter().flat_map(|&v| std::iter::repeat(v).take(stride)).collect(),
            Kind::Projection { nodes, m, lift, .. } => {
                let mut out = Vec::with_capacity(self.n);
                for elem in coarse.chunks(*nodes) {
                    for r in 0..*m {
                        out.push(lift[r * nodes..(r + 1) * nodes].iter().zip(elem).map(|(l, v)| l * v).sum());
                    }
                }
                out
            }
        })
    }
}

/// Fine and coarse flux operators paired with a filter.
pub struct ClosureOperator {
    filter: Filter,
    fine: Spectral,
    coarse: Spectral,
    viscosity: f64,
    flux: Flux,
}

impl ClosureOperator {
    pub fn new(spec: FilterSpec, n: usize, viscosity: f64, flux: Flux) -> Result<Self> {
        let filter = Filter::new(spec, n)?;
        Ok(Self { fine: Spectral::new(n), coarse: Spectral::new(filter.coarse_size()), filter, viscosity, flux })
    }

    pub fn filter(&self) -> &Filter {
        &self.filter
    }

    /// Filtered fine-grid flux divergence.
    pub fn filtered_flux(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.filter.check_len(u.len(), self.filter.n, "fine field")?;
        self.filter.apply(&self.fine.flux_divergence(u, self.viscosity, self.flux))
    }

    /// Coarse operator on the filtered field minus the filtered fine flux.
    pub fn closure_term(&self, u: &[f64]) -> Result<Vec<f64>> {
        let filtered = self.filter.apply(u)?;
        let coarse = self.coarse.flux_divergence(&filtered, self.viscosity, self.flux);
        let fine = self.filtered_flux(u)?;
        Ok(coarse.iter().zip(&fine).map(|(a, b)| a - b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_values() {
        let p = legendre(0.5, 3);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.5);
        assert!((p[2] - (-0.125)).abs() < 1e-15);
        assert!((p[3] - (-0.4375)).abs() < 1e-15);
    }

    #[test]
    fn projection_reproduces_cubics() {
        let f = Filter::new(FilterSpec::L2Projection { n_c: 16, p: 3 }, 64).unwrap();
        let u: Vec<f64> = (0..64).map(|i| {
            let x = (i % 16) as f64;
            1.0 + x - 0.1 * x * x + 0.01 * x * x * x
        }).collect();
        let back = f.lift(&f.apply(&u).unwrap()).unwrap();
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(Filter::new(FilterSpec::TopHat { n_c: 3 }, 16).is_err());
        assert!(Filter::new(FilterSpec::FourierCutoff { n_c: 8, k_c: 5 }, 16).is_err());
        assert!(Filter::new(FilterSpec::L2Projection { n_c: 6, p: 3 }, 24).is_err());
        assert!(Filter::new(FilterSpec::TopHat { n_c: 32 }, 16).is_err());
    }

    #[test]
    fn wrong_length_rejected() {
        let f = Filter::new(FilterSpec::TopHat { n_c: 4 }, 16).unwrap();
        assert!(f.apply(&[0.0; 8]).is_err());
        assert!(f.lift(&[0.0; 8]).is_err());
    }
}
