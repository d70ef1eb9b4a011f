//! Skip-connected transformer backbone that predicts a velocity for a latent
//! token set.
//!
//! The timestep is embedded as one extra token prepended to the projected
//! latents. `N` encoder blocks are followed by a middle block and `N` decoder
//! blocks; decoder block `j` (0-based, in execution order) adds the output of
//! encoder block `N − j` (1-based) to its own output. Each block applies
//! pre-normalized self-attention, then local and global cross-attention
//! computed from the same normalized input and summed, then an FFN that may be
//! a mixture of experts. There is no positional encoding, so the latent
//! tokens are treated as an unordered set.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{rmsnorm_heads, silu, Attention, LayerNorm, Linear};
use crate::moe::{moe_forward, DenseFfn, MoeBlockParams, RoutingDecision};
use crate::weights::{self, Params};
use crate::{shape_err, NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Encoder (and decoder) block count `N`.
    pub n_blocks: usize,
    pub width: usize,
    pub heads: usize,
    /// Nominal latent length; the forward pass accepts any length.
    pub latent_len: usize,
    pub channels: usize,
    /// Decoder block indices (execution order, 0-based) that use MoE FFNs.
    pub moe_layers: Vec<usize>,
    pub experts: usize,
    pub top_k: usize,
    pub ffn_hidden: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub time_freq_dim: usize,
}

impl ArchConfig {
    /// Full-size configuration: 10 blocks per side at width 2048 with 16
    /// heads, MoE in the last six decoder blocks.
    pub fn full() -> Self {
        Self {
            n_blocks: 10,
            width: 2048,
            heads: 16,
            latent_len: 4096,
            channels: 64,
            moe_layers: (4..10).collect(),
            experts: 8,
            top_k: 2,
            ffn_hidden: 4 * 2048,
            global_dim: 1024,
            local_dim: 1024,
            time_freq_dim: 256,
        }
    }

    /// Small configuration for tests and verification runs.
    pub fn toy() -> Self {
        Self {
            n_blocks: 2,
            width: 64,
            heads: 4,
            latent_len: 64,
            channels: 16,
            moe_layers: vec![1],
            experts: 8,
            top_k: 2,
            ffn_hidden: 128,
            global_dim: 24,
            local_dim: 40,
            time_freq_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.n_blocks == 0 {
            return bad("need at least one block per side".into());
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if let Some(j) = self.moe_layers.iter().find(|&&j| j >= self.n_blocks) {
            return bad(format!("moe layer {j} outside decoder 0..{}", self.n_blocks));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return bad(format!("top-k {} with {} experts", self.top_k, self.experts));
        }
        if self.time_freq_dim < 2 || self.time_freq_dim % 2 != 0 {
            return bad(format!("time frequency dim {} must be even", self.time_freq_dim));
        }
        if [self.channels, self.ffn_hidden, self.global_dim, self.local_dim].contains(&0) {
            return bad("zero-sized dimension".into());
        }
        Ok(())
    }
}

/// Externally supplied image features; only their widths matter here.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFeatures {
    pub i_global: Array2<f64>,
    pub i_local: Array2<f64>,
}

impl ConditionFeatures {
    pub fn random(config: &ArchConfig, global_tokens: usize, local_tokens: usize, rng: &mut impl Rng) -> Self {
        let normal = rand_distr::StandardNormal;
        Self {
            i_global: Array2::from_shape_simple_fn((global_tokens, config.global_dim), || rng.sample(normal)),
            i_local: Array2::from_shape_simple_fn((local_tokens, config.local_dim), || rng.sample(normal)),
        }
    }

    fn check(&self, global_dim: usize, local_dim: usize) -> Result<()> {
        if self.i_global.ncols() != global_dim || self.i_global.nrows() == 0 {
            return Err(shape_err("global features", self.i_global.dim(), ("≥1", global_dim)));
        }
        if self.i_local.ncols() != local_dim || self.i_local.nrows() == 0 {
            return Err(shape_err("local features", self.i_local.dim(), ("≥1", local_dim)));
        }
        if self.i_global.iter().chain(self.i_local.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::Domain("non-finite condition features".into()));
        }
        Ok(())
    }
}

/// Sinusoidal features followed by `Linear → SiLU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbed {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Params for TimeEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

/// `[cos(1000·t·ω_i), sin(1000·t·ω_i)]` with `ω_i = 10000^(−i/half)`.
pub fn timestep_features(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let w = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = 1000.0 * t * w;
        out[i] = a.cos();
        out[half + i] = a.sin();
    }
    out
}

pub fn embed_timestep(t: f64, embed: &TimeEmbed) -> Result<Array1<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NnError::Domain(format!("t = {t} not in [0, 1]")));
    }
    let feats = timestep_features(t, embed.fc1.input_dim()).insert_axis(Axis(0));
    let h = embed.fc1.forward(feats.view())?.mapv_into(silu);
    Ok(embed.fc2.forward(h.view())?.row(0).to_owned())
}

/// Per-head RMS normalization of projected queries and keys.
pub fn rmsnorm_qk(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    heads: usize,
    q_scale: ndarray::ArrayView1<f64>,
    k_scale: ndarray::ArrayView1<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok((rmsnorm_heads(q, heads, q_scale)?, rmsnorm_heads(k, heads, k_scale)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FfnParams {
    Dense(DenseFfn),
    Moe(MoeBlockParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub cross_local: Attention,
    pub cross_global: Attention,
    pub ffn: FfnParams,
}

impl BlockParams {
    pub fn random(config: &ArchConfig, moe: bool, rng: &mut impl Rng) -> Result<Self> {
        let (w, h) = (config.width, config.heads);
        let ffn = if moe {
            FfnParams::Moe(MoeBlockParams::random(w, config.ffn_hidden, config.experts, config.top_k, rng)?)
        } else {
            FfnParams::Dense(DenseFfn::random(w, config.ffn_hidden, rng))
        };
        Ok(Self {
            norm1: LayerNorm::new(w),
            self_attn: Attention::random(w, w, h, rng),
            norm2: LayerNorm::new(w),
            cross_local: Attention::random(w, config.local_dim, h, rng),
            cross_global: Attention::random(w, config.global_dim, h, rng),
            ffn,
        })
    }

    /// Zeroes the output projections of every residual branch, turning the
    /// block into the identity map.
    pub fn zero_residual_outputs(&mut self) {
        for att in [&mut self.self_attn, &mut self.cross_local, &mut self.cross_global] {
            att.wo.w.fill(0.0);
            att.wo.b.fill(0.0);
        }
        let mlps = match &mut self.ffn {
            FfnParams::Dense(d) => vec![&mut d.mlp],
            FfnParams::Moe(m) => m.experts.iter_mut().chain(std::iter::once(&mut m.shared_expert)).collect(),
        };
        for mlp in mlps {
            mlp.fc2.w.fill(0.0);
            mlp.fc2.b.fill(0.0);
        }
    }
}

impl Params for BlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.cross_local.visit(&format!("{prefix}.cross_local"), f);
        self.cross_global.visit(&format!("{prefix}.cross_global"), f);
        match &self.ffn {
            FfnParams::Dense(d) => d.visit(&format!("{prefix}.ffn"), f),
            FfnParams::Moe(m) => m.visit(&format!("{prefix}.moe"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.cross_local.visit_mut(&format!("{prefix}.cross_local"), f);
        self.cross_global.visit_mut(&format!("{prefix}.cross_global"), f);
        match &mut self.ffn {
            FfnParams::Dense(d) => d.visit_mut(&format!("{prefix}.ffn"), f),
            FfnParams::Moe(m) => m.visit_mut(&format!("{prefix}.moe"), f),
        }
    }
}

fn block_forward_routed(
    z: ArrayView2<f64>,
    cond: &ConditionFeatures,
    params: &BlockParams,
) -> Result<(Array2<f64>, Option<RoutingDecision>)> {
    let width = params.norm1.gamma.len();
    if z.ncols() != width {
        return Err(shape_err("block token width", z.ncols(), width));
    }
    cond.check(params.cross_global.wk.input_dim(), params.cross_local.wk.input_dim())?;
    let h = params.norm1.forward(z)?;
    let mut z = &z + &params.self_attn.forward(h.view(), h.view())?;
    let h = params.norm2.forward(z.view())?;
    let local = params.cross_local.forward(h.view(), cond.i_local.view())?;
    let global = params.cross_global.forward(h.view(), cond.i_global.view())?;
    z += &(local + global);
    match &params.ffn {
        FfnParams::Dense(d) => Ok((d.forward(z.view())?, None)),
        FfnParams::Moe(m) => {
            let (out, decision) = moe_forward(z.view(), m)?;
            Ok((out, Some(decision)))
        }
    }
}

pub fn block_forward(z: ArrayView2<f64>, cond: &ConditionFeatures, params: &BlockParams) -> Result<Array2<f64>> {
    Ok(block_forward_routed(z, cond, params)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub config: ArchConfig,
    pub time_embed: TimeEmbed,
    pub x_proj: Linear,
    pub encoder: Vec<BlockParams>,
    pub middle: BlockParams,
    pub decoder: Vec<BlockParams>,
    pub final_norm: LayerNorm,
    pub out_proj: Linear,
}

impl BackboneWeights {
    pub fn random(config: &ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let time_embed = TimeEmbed {
            fc1: Linear::random(config.time_freq_dim, w, &mut rng),
            fc2: Linear::random(w, w, &mut rng),
        };
        let x_proj = Linear::random(config.channels, w, &mut rng);
        let encoder = (0..config.n_blocks)
            .map(|_| BlockParams::random(config, false, &mut rng))
            .collect::<Result<_>>()?;
        let middle = BlockParams::random(config, false, &mut rng)?;
        let decoder = (0..config.n_blocks)
            .map(|j| BlockParams::random(config, config.moe_layers.contains(&j), &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            time_embed,
            x_proj,
            encoder,
            middle,
            decoder,
            final_norm: LayerNorm::new(w),
            out_proj: Linear::random(w, config.channels, &mut rng),
        })
    }

    /// Every tensor, including normalization gains, set to zero.
    pub fn zeros(config: &ArchConfig) -> Result<Self> {
        let mut w = Self::random(config, 0)?;
        w.visit_mut("", &mut |_, _, v| v.fill(0.0));
        Ok(w)
    }

    pub fn manifest(&self) -> String {
        weights::manifest(self, "backbone")
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        weights::write_sfma(out, &self.config, self)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        Ok(weights::read_sfma(input, |c: &ArchConfig| Self::random(c, 0))?.1)
    }
}

impl Params for BackboneWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.time_embed.visit(&format!("{prefix}.time_embed"), f);
        self.x_proj.visit(&format!("{prefix}.x_proj"), f);
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("{prefix}.encoder.{}", i + 1), f);
        }
        self.middle.visit(&format!("{prefix}.middle"), f);
        for (j, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("{prefix}.decoder.{j}"), f);
        }
        self.final_norm.visit(&format!("{prefix}.final_norm"), f);
        self.out_proj.visit(&format!("{prefix}.out_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.time_embed.visit_mut(&format!("{prefix}.time_embed"), f);
        self.x_proj.visit_mut(&format!("{prefix}.x_proj"), f);
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.encoder.{}", i + 1), f);
        }
        self.middle.visit_mut(&format!("{prefix}.middle"), f);
        for (j, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.decoder.{j}"), f);
        }
        self.final_norm.visit_mut(&format!("{prefix}.final_norm"), f);
        self.out_proj.visit_mut(&format!("{prefix}.out_proj"), f);
    }
}

/// Additive perturbation of the skip copy of encoder block `encoder`
/// (1-based); the sequence entering the next encoder block is untouched.
#[derive(Debug, Clone)]
pub struct SkipProbe {
    pub encoder: usize,
    pub delta: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct BackboneTrace {
    pub velocity: Array2<f64>,
    /// Outputs of encoder blocks `1..=N`, timestep token included.
    pub encoder_outputs: Vec<Array2<f64>>,
    pub middle_output: Array2<f64>,
    /// Outputs of decoder blocks `0..N` after the skip addition.
    pub decoder_outputs: Vec<Array2<f64>>,
    pub routing: Vec<RoutingDecision>,
}

pub fn backbone_forward_traced(
    x: ArrayView2<f64>,
    t: f64,
    cond: &ConditionFeatures,
    weights: &BackboneWeights,
    probe: Option<&SkipProbe>,
) -> Result<BackboneTrace> {
    let cfg = &weights.config;
    if x.ncols() != cfg.channels {
        return Err(shape_err("latent channels", x.ncols(), cfg.channels));
    }
    if weights.encoder.len() != cfg.n_blocks || weights.decoder.len() != cfg.n_blocks {
        return Err(shape_err(
            "block count",
            (weights.encoder.len(), weights.decoder.len()),
            cfg.n_blocks,
        ));
    }
    let n = cfg.n_blocks;
    let tok = embed_timestep(t, &weights.time_embed)?.insert_axis(Axis(0));
    let lat = weights.x_proj.forward(x)?;
    let mut z = concatenate(Axis(0), &[tok.view(), lat.view()]).expect("matching widths");

    let mut encoder_outputs = Vec::with_capacity(n);
    for block in &weights.encoder {
        z = block_forward(z.view(), cond, block)?;
        encoder_outputs.push(z.clone());
    }
    let mut skips = encoder_outputs.clone();
    if let Some(p) = probe {
        if !(1..=n).contains(&p.encoder) {
            return Err(NnError::Domain(format!("probe encoder {} not in 1..={n}", p.encoder)));
        }
        let target = &mut skips[p.encoder - 1];
        if p.delta.dim() != target.dim() {
            return Err(shape_err("probe delta", p.delta.dim(), target.dim()));
        }
        *target += &p.delta;
    }
    z = block_forward(z.view(), cond, &weights.middle)?;
    let middle_output = z.clone();

    let mut decoder_outputs = Vec::with_capacity(n);
    let mut routing = Vec::new();
    for (j, block) in weights.decoder.iter().enumerate() {
        let (out, decision) = block_forward_routed(z.view(), cond, block)?;
        routing.extend(decision);
        z = out + &skips[n - j - 1];
        decoder_outputs.push(z.clone());
    }

    let h = weights.final_norm.forward(z.slice(s![1.., ..]))?;
    let velocity = weights.out_proj.forward(h.view())?;
    Ok(BackboneTrace {
        velocity,
        encoder_outputs,
        middle_output,
        decoder_outputs,
        routing,
    })
}

/// Velocity prediction for latent `x` (`L × C`) at time `t`.
pub fn backbone_forward(
    x: ArrayView2<f64>,
    t: f64,
    cond: &ConditionFeatures,
    weights: &BackboneWeights,
) -> Result<Array2<f64>> {
    Ok(backbone_forward_traced(x, t, cond, weights, None)?.velocity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
    }

    #[test]
    fn config_validation() {
        assert!(ArchConfig::full().validate().is_ok());
        assert!(ArchConfig::toy().validate().is_ok());
        let mut c = ArchConfig::toy();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ArchConfig::toy();
        c.moe_layers = vec![2];
        assert!(c.validate().is_err());
        let mut c = ArchConfig::toy();
        c.n_blocks = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn timestep_embedding() {
        let w = BackboneWeights::random(&ArchConfig::toy(), 3).unwrap();
        let a = embed_timestep(0.0, &w.time_embed).unwrap();
        let b = embed_timestep(1.0, &w.time_embed).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, embed_timestep(0.0, &w.time_embed).unwrap());
        assert!(cosine(&a, &b) < 0.999);
        assert!(matches!(embed_timestep(1.5, &w.time_embed), Err(NnError::Domain(_))));
    }

    #[test]
    fn rms_examples() {
        let ones = Array1::ones(4);
        let q = Array2::from_shape_fn((2, 8), |(i, j)| if (i + j) % 2 == 0 { 5.0 } else { -5.0 });
        let (nq, nk) = rmsnorm_qk(q.view(), (q.clone() * 10.0).view(), 2, ones.view(), ones.view()).unwrap();
        for row in nq.rows() {
            for h in 0..2 {
                let seg = row.slice(s![h * 4..(h + 1) * 4]);
                let rms = (seg.dot(&seg) / 4.0).sqrt();
                assert!((rms - 1.0).abs() < 1e-9);
            }
        }
        assert!((&nq - &nk).iter().all(|d| d.abs() < 1e-15));
        let z = Array2::zeros((1, 8));
        let (zq, _) = rmsnorm_qk(z.view(), z.view(), 2, ones.view(), ones.view()).unwrap();
        assert!(zq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_roundtrip_through_f32() {
        let w = BackboneWeights::random(&ArchConfig::toy(), 9).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = BackboneWeights::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, w.config);
        let mut a = Vec::new();
        w.visit("", &mut |_, _, v| a.extend(v.iter().map(|&x| f64::from(x as f32))));
        let mut b = Vec::new();
        back.visit("", &mut |_, _, v| b.extend_from_slice(v));
        assert_eq!(a, b);
        assert!(BackboneWeights::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let manifest = w.manifest();
        assert!(manifest.starts_with("backbone.time_embed.fc1.w\t32x64\n"));
        assert!(manifest.contains("backbone.decoder.1.moe.experts.7.fc2.b\t64\n"));
    }
}
