//! Explicit Euler integration of `dx/dt = v(x, t)` from noise at `t = 0` to
//! data at `t = 1`.

use crate::timestep::ResolutionShift;
use crate::{FlowError, Result};

/// Time grid `t_k = shift(k / steps)`, `k = 0..=steps`.
pub fn time_grid(steps: usize, shift: Option<ResolutionShift>) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(FlowError::InvalidParameter("steps must be ≥ 1".into()));
    }
    (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            match shift {
                Some(s) => s.apply(t),
                None => Ok(t),
            }
        })
        .collect()
}

pub fn euler_sample(
    mut velocity: impl FnMut(&[f64], f64) -> Vec<f64>,
    eps: &[f64],
    steps: usize,
    shift: Option<ResolutionShift>,
) -> Result<Vec<f64>> {
    let grid = time_grid(steps, shift)?;
    let mut x = eps.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        let v = velocity(&x, w[0]);
        if v.len() != x.len() {
            return Err(FlowError::ShapeMismatch(v.len(), x.len()));
        }
        let dt = w[1] - w[0];
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFiniteState(k));
        }
    }
    Ok(x)
}
