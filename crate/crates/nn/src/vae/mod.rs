//! VAE geometry losses against queryable fields, and forward VecSet kernels
//! that encode an oriented point cloud into a set of latent tokens and decode
//! signed distances at query points.

pub mod field;
pub mod loss;
pub mod reference;
pub mod vecset;

pub use field::{FieldOracle, GradientMode, DEFAULT_FD_STEP};
pub use loss::{
    eikonal_loss, kl_loss, normal_loss, occupancy_bce, sdf_loss, total_vae_loss, LatentGaussian, VaeLossParts,
    VaeLossWeights,
};
pub use vecset::{
    decode_sdf, encode_pointcloud, farthest_point_sample, point_embedding, EncodeOutput, VaeArchConfig,
    VecSetDecoder, VecSetEncoder,
};
