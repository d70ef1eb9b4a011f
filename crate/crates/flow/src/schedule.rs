//! Interpolants between data `x0` and noise `eps`.

use serde::{Deserialize, Serialize};

use crate::{check_len, check_unit, FlowError, Result};

/// Discrete variance-preserving schedule with cumulative products
/// `alpha_bar[t] = Π_{s ≤ t} (1 − beta[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DdpmSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(FlowError::InvalidParameter("empty beta schedule".into()));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(FlowError::InvalidParameter(format!("beta {b} not in (0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bar = beta
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    /// Linear ramp of `steps` betas from `start` to `end` inclusive.
    pub fn linear(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(FlowError::InvalidParameter(format!("{steps} steps")));
        }
        let beta = (0..steps)
            .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(beta)
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for DdpmSchedule {
    /// Linear `1e-4 → 0.02` over 1000 steps.
    fn default() -> Self {
        Self::linear(1e-4, 0.02, 1000).expect("valid default schedule")
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps` for an explicit `alpha_bar` in `[0, 1]`.
pub fn ddpm_mix(x0: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_len(x0, eps)?;
    check_unit("alpha_bar", alpha_bar)?;
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn ddpm_interpolate(x0: &[f64], eps: &[f64], t: usize, sched: &DdpmSchedule) -> Result<Vec<f64>> {
    let ab = *sched.alpha_bar.get(t).ok_or(FlowError::IndexOutOfRange {
        index: t,
        len: sched.len(),
    })?;
    ddpm_mix(x0, eps, ab)
}

/// Power-form noise level `σ(t) = [(σ_max^{1/ρ} − σ_min^{1/ρ})·t + σ_min^{1/ρ}]^ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for EdmSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

impl EdmSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(FlowError::InvalidParameter(format!(
                "need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("rho {rho}")));
        }
        Ok(Self {
            sigma_min,
            sigma_max,
            rho,
        })
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        let lo = self.sigma_min.powf(1.0 / self.rho);
        let hi = self.sigma_max.powf(1.0 / self.rho);
        if t == 0.0 {
            return Ok(self.sigma_min);
        }
        if t == 1.0 {
            return Ok(self.sigma_max);
        }
        Ok(((hi - lo) * t + lo).powf(self.rho))
    }
}

/// `x0 + σ(t)·eps`.
pub fn edm_interpolate(x0: &[f64], eps: &[f64], t: f64, sched: &EdmSchedule) -> Result<Vec<f64>> {
    check_len(x0, eps)?;
    let s = sched.sigma(t)?;
    Ok(x0.iter().zip(eps).map(|(x, e)| x + s * e).collect())
}

/// `t·x0 + (1 − t)·eps`.
pub fn rf_interpolate(x0: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    check_len(x0, eps)?;
    check_unit("t", t)?;
    Ok(x0.iter().zip(eps).map(|(x, e)| t * x + (1.0 - t) * e).collect())
}

/// Time derivative of the linear path: `x0 − eps`.
pub fn rf_velocity_target(x0: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    check_len(x0, eps)?;
    Ok(x0.iter().zip(eps).map(|(x, e)| x - e).collect())
}
