//! Fourier pseudo-spectral derivatives on a periodic grid of length 2 pi.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Flux function `F(u)` of the conservation law `u_t + d/dx F(u) = nu u_xx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Flux {
    /// `F(u) = u^2 / 2`, with 2/3-rule dealiasing of the product.
    Burgers,
    /// `F(u) = c u`.
    LinearAdvection { speed: f64 },
}

impl Default for Flux {
    fn default() -> Self {
        Flux::Burgers
    }
}

/// Forward/inverse FFT pair with signed integer wavenumbers.
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let wavenumbers = (0..n)
            .map(|i| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 })
            .collect();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumbers,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Signed wavenumber of FFT bin `i`; bin `n/2` reports `+n/2`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        self.wavenumbers[i]
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform including the `1/n` normalization; returns the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    fn is_nyquist(&self, i: usize) -> bool {
        self.n % 2 == 0 && i == self.n / 2
    }

    /// Flux divergence `d/dx F(u) - nu u_xx`.
    pub fn flux_divergence(&self, u: &[f64], viscosity: f64, flux: Flux) -> Vec<f64> {
        let u_hat = self.forward(u);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        match flux {
            Flux::Burgers => {
                let half_sq: Vec<f64> = u.iter().map(|v| 0.5 * v * v).collect();
                let f_hat = self.forward(&half_sq);
                let cutoff = self.n as f64 / 3.0;
                for i in 0..self.n {
                    let k = self.wavenumber(i);
                    if k.abs() <= cutoff && !self.is_nyquist(i) {
                        out[i] = Complex64::new(0.0, k) * f_hat[i];
                    }
                }
            }
            Flux::LinearAdvection { speed } => {
                for i in 0..self.n {
                    if !self.is_nyquist(i) {
                        out[i] = Complex64::new(0.0, speed * self.wavenumber(i)) * u_hat[i];
                    }
                }
            }
        }
        for i in 0..self.n {
            let k = self.wavenumber(i);
            out[i] += viscosity * k * k * u_hat[i];
        }
        self.inverse(out)
    }
}
