//! Flow and diffusion mathematics: DDPM, EDM and rectified-flow
//! interpolants, logit-normal timestep sampling, resolution-dependent
//! timestep shifting, Euler ODE sampling and a small rectified-flow trainer
//! for 2D toy distributions.
//!
//! Time runs from `t = 0` (pure noise) to `t = 1` (data).

pub mod euler;
pub mod schedule;
pub mod timestep;
pub mod toy;

pub use euler::euler_sample;
pub use schedule::{ddpm_interpolate, edm_interpolate, rf_interpolate, rf_velocity_target, DdpmSchedule, EdmSchedule};
pub use timestep::{logit_normal_density, shift_timestep, LogitNormalSampler, ResolutionShift};
pub use toy::{train_toy_rf, ToyVelocityNet, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("step index {index} out of range for {len} steps")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("length mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("non-finite state at step {0}")]
    NonFiniteState(usize),
    #[error("loss diverged at step {step}: {loss}")]
    DivergedLoss { step: usize, loss: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

pub(crate) fn check_unit(name: &str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FlowError::Domain(format!("{name} = {t} not in [0, 1]")))
    }
}

pub(crate) fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(FlowError::ShapeMismatch(a.len(), b.len()))
    }
}
