//! Training-time timestep distribution and the resolution-dependent shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{check_unit, FlowError, Result};

/// Logit-normal density
/// `1 / (s·√(2π)·t·(1−t)) · exp(−(logit(t) − m)² / (2s²))` on `(0, 1)`.
pub fn logit_normal_density(t: f64, m: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(FlowError::Domain(format!("t = {t} not in (0, 1)")));
    }
    if !(s > 0.0) {
        return Err(FlowError::Domain(format!("s = {s} must be positive")));
    }
    let z = (t / (1.0 - t)).ln() - m;
    let norm = s * (2.0 * std::f64::consts::PI).sqrt() * t * (1.0 - t);
    Ok((-z * z / (2.0 * s * s)).exp() / norm)
}

/// Draws `sigmoid(z)` with `z ~ N(m, s²)`.
#[derive(Debug, Clone)]
pub struct LogitNormalSampler {
    pub m: f64,
    pub s: f64,
    rng: ChaCha8Rng,
}

impl LogitNormalSampler {
    pub fn new(m: f64, s: f64, seed: u64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite() && m.is_finite()) {
            return Err(FlowError::InvalidParameter(format!("logit-normal m = {m}, s = {s}")));
        }
        Ok(Self {
            m,
            s,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let t = 1.0 / (1.0 + (-(self.m + self.s * z)).exp());
        // keep the draw strictly inside (0, 1)
        t.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

impl Iterator for LogitNormalSampler {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.sample())
    }
}

/// Shift from base token count `n` to target token count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionShift {
    pub n: u64,
    pub m: u64,
}

impl ResolutionShift {
    pub fn new(n: u64, m: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(FlowError::Domain(format!("resolutions must be ≥ 1, got n = {n}, m = {m}")));
        }
        Ok(Self { n, m })
    }

    pub fn inverse(&self) -> Self {
        Self { n: self.m, m: self.n }
    }

    pub fn apply(&self, t: f64) -> Result<f64> {
        shift_timestep(t, self.n, self.m)
    }
}

/// `t_m = √(m/n)·t_n / (1 + (√(m/n) − 1)·t_n)`.
pub fn shift_timestep(t_n: f64, n: u64, m: u64) -> Result<f64> {
    ResolutionShift::new(n, m)?;
    check_unit("t_n", t_n)?;
    let a = (m as f64 / n as f64).sqrt();
    // rounding can push t_n = 1 just past 1
    Ok((a * t_n / (1.0 + (a - 1.0) * t_n)).min(1.0))
}
