use meshflow_core::Vec3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::field::{FieldOracle, GradientMode};
use crate::{shape_err, NnError, Result};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;
pub const BCE_CLIP: f64 = 1e-7;
/// Gradients shorter than this make the normal direction undefined.
pub const MIN_GRADIENT_NORM: f64 = 1e-8;

fn check_samples(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err("sample count", a, b));
    }
    if a == 0 {
        return Err(shape_err("sample count", 0, "≥ 1"));
    }
    Ok(())
}

/// Mean of `|s − ŝ| + (s − ŝ)²`.
pub fn sdf_loss(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    check_samples(s.len(), s_hat.len())?;
    let sum: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b).abs() + (a - b) * (a - b)).sum();
    Ok(sum / s.len() as f64)
}

/// Mean of `1 − ⟨∇D/‖∇D‖, n̂⟩` over surface points.
pub fn normal_loss(field: &FieldOracle, x: &[Vec3], n_hat: &[Vec3], mode: GradientMode) -> Result<f64> {
    check_samples(x.len(), n_hat.len())?;
    let mut sum = 0.0;
    for (index, (p, n)) in x.iter().zip(n_hat).enumerate() {
        let g = field.gradient(p, mode);
        let len = g.norm();
        if !(len >= MIN_GRADIENT_NORM) {
            return Err(NnError::ZeroGradient { index });
        }
        sum += 1.0 - g.dot(n) / len;
    }
    Ok(sum / x.len() as f64)
}

/// Mean of `(‖∇D‖ − 1)²`.
pub fn eikonal_loss(field: &FieldOracle, x: &[Vec3], mode: GradientMode) -> Result<f64> {
    check_samples(x.len(), x.len())?;
    let sum: f64 = x.iter().map(|p| (field.gradient(p, mode).norm() - 1.0).powi(2)).sum();
    Ok(sum / x.len() as f64)
}

/// Diagonal Gaussian posterior over `M × C` latent tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
}

impl LatentGaussian {
    /// Clamps `logvar` into `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub fn new(mu: Array2<f64>, logvar: Array2<f64>) -> Result<Self> {
        if mu.dim() != logvar.dim() {
            return Err(shape_err("logvar", logvar.dim(), mu.dim()));
        }
        if mu.iter().any(|v| !v.is_finite()) || logvar.iter().any(|v| v.is_nan()) {
            return Err(NnError::Domain("non-finite latent statistics".into()));
        }
        Ok(Self {
            mu,
            logvar: logvar.mapv_into(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)),
        })
    }

    /// `μ + exp(½·logvar)·ε`.
    pub fn reparameterize(&self, eps: &Array2<f64>) -> Result<Array2<f64>> {
        if eps.dim() != self.mu.dim() {
            return Err(shape_err("noise", eps.dim(), self.mu.dim()));
        }
        Ok(&self.mu + &(self.logvar.mapv(|v| (0.5 * v).exp()) * eps))
    }
}

/// Mean over entries of `½(μ² + e^logvar − logvar − 1)`.
pub fn kl_loss(latent: &LatentGaussian) -> f64 {
    let n = latent.mu.len().max(1) as f64;
    latent
        .mu
        .iter()
        .zip(&latent.logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum::<f64>()
        / n
}

/// Mean binary cross-entropy with predictions clipped to
/// `[BCE_CLIP, 1 − BCE_CLIP]`.
pub fn occupancy_bce(o: &[f64], o_hat: &[f64]) -> Result<f64> {
    check_samples(o.len(), o_hat.len())?;
    let sum: f64 = o
        .iter()
        .zip(o_hat)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / o.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossWeights {
    pub lambda_sn: f64,
    pub lambda_eik: f64,
    pub lambda_kl: f64,
}

impl Default for VaeLossWeights {
    fn default() -> Self {
        Self {
            lambda_sn: 10.0,
            lambda_eik: 0.1,
            lambda_kl: 0.001,
        }
    }
}

impl VaeLossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_sn, self.lambda_eik, self.lambda_kl].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("negative or non-finite loss weight in {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossParts {
    pub sdf: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub kl: f64,
}

/// `L_sdf + λ_sn·L_sn + λ_eik·L_eik + λ_kl·L_kl`.
pub fn total_vae_loss(parts: &VaeLossParts, weights: &VaeLossWeights) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [
        ("sdf", parts.sdf),
        ("normal", parts.normal),
        ("eikonal", parts.eikonal),
        ("kl", parts.kl),
    ] {
        if !v.is_finite() {
            return Err(NnError::NonFinitePart(name));
        }
    }
    Ok(parts.sdf + weights.lambda_sn * parts.normal + weights.lambda_eik * parts.eikonal + weights.lambda_kl * parts.kl)
}

/// One `name,value,samples` CSV line.
pub fn loss_csv_row(name: &str, value: f64, samples: usize) -> String {
    format!("{name},{value:e},{samples}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdf_loss_examples() {
        assert_eq!(sdf_loss(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(sdf_loss(&[1.0, 2.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(sdf_loss(&[0.5], &[0.0]).unwrap(), 0.75);
        assert!(matches!(sdf_loss(&[1.0], &[]), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn kl_examples() {
        let z = Array2::zeros((2, 3));
        assert_eq!(kl_loss(&LatentGaussian::new(z.clone(), z.clone()).unwrap()), 0.0);
        let one = Array2::ones((2, 3));
        assert!((kl_loss(&LatentGaussian::new(one, z.clone()).unwrap()) - 0.5).abs() < 1e-15);
        let ln2 = Array2::from_elem((2, 3), 2f64.ln());
        let v = kl_loss(&LatentGaussian::new(z.clone(), ln2).unwrap());
        assert!((v - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.15343).abs() < 1e-5);
        let wild = LatentGaussian::new(z.clone(), Array2::from_elem((2, 3), 100.0)).unwrap();
        assert!(wild.logvar.iter().all(|&v| v == LOGVAR_MAX));
        assert!(LatentGaussian::new(z, Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!(occupancy_bce(&[1e-9, 1.0 - 1e-9], &[0.0, 1.0]).unwrap() < 1e-6);
        assert!((occupancy_bce(&[0.5; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((occupancy_bce(&[0.9], &[1.0]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w = VaeLossWeights::default();
        let p = |sdf, normal, eikonal, kl| VaeLossParts { sdf, normal, eikonal, kl };
        assert_eq!(total_vae_loss(&p(1.0, 0.0, 0.0, 0.0), &w).unwrap(), 1.0);
        assert_eq!(total_vae_loss(&p(0.0, 1.0, 0.0, 0.0), &w).unwrap(), 10.0);
        assert!((total_vae_loss(&p(1.0, 1.0, 1.0, 1.0), &w).unwrap() - 11.101).abs() < 1e-12);
        assert!(matches!(
            total_vae_loss(&p(0.0, f64::NAN, 0.0, 0.0), &w),
            Err(NnError::NonFinitePart("normal"))
        ));
        assert_eq!(loss_csv_row("sdf", 0.5, 10), "sdf,5e-1,10");
    }
}
