//! Forward-only neural kernels.
//!
//! [`arch`] and [`moe`] hold the diffusion backbone: a stack of transformer
//! blocks with long encoder→decoder skips, dual cross-attention conditioning
//! and mixture-of-experts FFNs in selected decoder blocks. [`vae`] holds the
//! geometry losses and a VecSet point-cloud encoder and SDF decoder.
//!
//! Token matrices are `ndarray::Array2<f64>` with one row per token.

pub mod arch;
pub mod layers;
pub mod moe;
pub mod probe;
pub mod vae;
pub mod weights;

pub use arch::{
    backbone_forward, block_forward, embed_timestep, rmsnorm_qk, ArchConfig, BackboneWeights, BlockParams,
    ConditionFeatures,
};
pub use moe::{aux_balance_loss, gate_topk, init_moe_from_dense, moe_forward, DenseFfn, MoeBlockParams, RoutingDecision};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("gradient vanishes at sample {index}")]
    ZeroGradient { index: usize },
    #[error("loss part `{0}` is not finite")]
    NonFinitePart(&'static str),
    #[error("need at least {need} points, got {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Geom(#[from] meshflow_core::GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(what: &str, got: impl std::fmt::Debug, want: impl std::fmt::Debug) -> NnError {
    NnError::ShapeMismatch(format!("{what}: got {got:?}, expected {want:?}"))
}
