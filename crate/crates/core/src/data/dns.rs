//! Periodic 1D viscous Burgers solver: pseudo-spectral in space, RK4 in time.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{Flux, Spectral};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Random phases under `E(k) ~ k^4 exp(-(k/k0)^2)`, rescaled to the given rms.
    Spectrum { k0: f64, u_rms: f64 },
    /// Explicit grid values.
    Field { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsConfig {
    pub n: usize,
    pub viscosity: f64,
    pub dt: f64,
    pub initial: InitialCondition,
    #[serde(default)]
    pub flux: Flux,
}

impl DnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::config(format!("dns.n must be a power of two >= 4, got {}", self.n)));
        }
        if !(self.viscosity > 0.0) || !self.viscosity.is_finite() {
            return Err(Error::config(format!("dns.viscosity must be positive, got {}", self.viscosity)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("dns.dt must be positive, got {}", self.dt)));
        }
        match &self.initial {
            InitialCondition::Spectrum { k0, u_rms } => {
                if !(*k0 > 0.0) || !(*u_rms >= 0.0) {
                    return Err(Error::config("dns.initial needs k0 > 0 and u_rms >= 0"));
                }
            }
            InitialCondition::Field { values } => {
                if values.len() != self.n {
                    return Err(Error::config(format!(
                        "dns.initial.values has {} entries, expected {}",
                        values.len(),
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of whole steps needed to reach `t`; errors when `t` is not on the step grid.
    pub fn steps_for(&self, t: f64, what: &str) -> Result<usize> {
        steps_in(t, self.dt, what)
    }
}

pub(crate) fn steps_in(t: f64, dt: f64, what: &str) -> Result<usize> {
    let q = t / dt;
    let r = q.round();
    if r < 0.0 || (q - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::config(format!(
            "{what} = {t} is not an integer multiple of the DNS time step {dt}"
        )));
    }
    Ok(r as usize)
}

/// Random-phase field with the model spectrum, restricted to `|k| <= n/3`.
pub fn spectrum_field(n: usize, k0: f64, u_rms: f64, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let spec = Spectral::new(n);
    let mut u_hat = vec![Complex64::new(0.0, 0.0); n];
    let kmax = n / 3;
    for k in 1..=kmax.min(n / 2 - 1) {
        let kf = k as f64;
        let amp = (kf.powi(4) * (-(kf / k0).powi(2)).exp()).sqrt();
        let phase = rng.uniform(0.0, 2.0 * PI);
        let c = Complex64::from_polar(amp, phase);
        u_hat[k] = c;
        u_hat[n - k] = c.conj();
    }
    let mut u = spec.inverse(u_hat);
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { u_rms / rms } else { 0.0 };
    for v in &mut u {
        *v *= scale;
    }
    u
}

/// Explicit stepper; [`burgers_dns`] drives it to collect snapshots.
pub struct Dns {
    spectral: Spectral,
    viscosity: f64,
    dt: f64,
    flux: Flux,
    u: Vec<f64>,
    step: usize,
    blowup: f64,
}

impl Dns {
    pub fn new(config: &DnsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let u = match &config.initial {
            InitialCondition::Spectrum { k0, u_rms } => spectrum_field(config.n, *k0, *u_rms, seed),
            InitialCondition::Field { values } => values.clone(),
        };
        let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !umax.is_finite() {
            return Err(Error::config("initial field is not finite"));
        }
        let dx = 2.0 * PI / config.n as f64;
        let speed = match config.flux {
            Flux::Burgers => umax,
            Flux::LinearAdvection { speed } => speed.abs(),
        };
        if config.dt * speed > 0.5 * dx {
            return Err(Error::config(format!(
                "CFL violated: dt = {} exceeds 0.5 dx / max|u| = {:e}",
                config.dt,
                0.5 * dx / speed
            )));
        }
        Ok(Self {
            spectral: Spectral::new(config.n),
            viscosity: config.viscosity,
            dt: config.dt,
            flux: config.flux,
            u,
            step: 0,
            blowup: 100.0 * umax,
        })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.spectral.flux_divergence(u, self.viscosity, self.flux);
        for v in &mut r {
            *v = -*v;
        }
        r
    }

    pub fn advance(&mut self) -> Result<()> {
        let dt = self.dt;
        let u = &self.u;
        let shifted = |k: &[f64], a: f64| -> Vec<f64> { u.iter().zip(k).map(|(u, k)| u + a * k).collect() };
        let k1 = self.rhs(u);
        let k2 = self.rhs(&shifted(&k1, 0.5 * dt));
        let k3 = self.rhs(&shifted(&k2, 0.5 * dt));
        let k4 = self.rhs(&shifted(&k3, dt));
        let next: Vec<f64> = (0..u.len())
            .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        self.step += 1;
        let umax = next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !umax.is_finite() || (self.blowup > 0.0 && umax > self.blowup) {
            return Err(Error::numeric(format!(
                "DNS blew up at step {} (t = {}): max|u| = {umax:e}",
                self.step,
                self.time()
            )));
        }
        self.u = next;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DnsField {
    pub n: usize,
    pub viscosity: f64,
    pub dt: f64,
    pub flux: Flux,
    pub snapshots: Vec<Snapshot>,
}

impl DnsField {
    pub fn at_step(&self, step: usize) -> Result<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&step, |s| s.step)
            .map(|i| &self.snapshots[i])
            .map_err(|_| Error::usage(format!("no DNS snapshot stored at step {step}")))
    }

    pub fn at_time(&self, t: f64) -> Result<&Snapshot> {
        self.at_step(steps_in(t, self.dt, "snapshot time").map_err(|e| Error::usage(e.to_string()))?)
    }
}

/// Runs to `t_end`, storing every step.
pub fn burgers_dns(config: &DnsConfig, seed: u64, t_end: f64) -> Result<DnsField> {
    let steps = config.steps_for(t_end, "t_end")?;
    let mut dns = Dns::new(config, seed)?;
    let mut snapshots = Vec::with_capacity(steps + 1);
    loop {
        snapshots.push(Snapshot { step: dns.step_index(), time: dns.time(), u: dns.u().to_vec() });
        if dns.step_index() == steps {
            break;
        }
        dns.advance()?;
    }
    Ok(DnsField { n: config.n, viscosity: config.viscosity, dt: config.dt, flux: config.flux, snapshots })
}
