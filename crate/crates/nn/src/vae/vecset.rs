//! VecSet encoder and decoder.
//!
//! The encoder picks `M` query points by farthest-point sampling, lets them
//! cross-attend to the whole cloud (Fourier position embedding concatenated
//! with the normal), refines them with self-attention and maps each token to
//! a mean and log-variance. The decoder refines latent tokens with
//! self-attention, then each query position cross-attends to them and a
//! linear head yields one signed distance.

use std::io::{Read, Write};

use meshflow_core::Vec3;
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::LatentGaussian;
use crate::layers::{Attention, LayerNorm, Linear, Mlp};
use crate::weights::{self, Params};
use crate::{shape_err, NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArchConfig {
    /// Default latent token count `M`.
    pub latent_tokens: usize,
    pub channels: usize,
    pub width: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Octaves of the Fourier position embedding.
    pub posemb_freqs: usize,
    pub mlp_hidden: usize,
}

impl VaeArchConfig {
    pub fn full() -> Self {
        Self {
            latent_tokens: 2048,
            channels: 64,
            width: 768,
            heads: 12,
            enc_layers: 8,
            dec_layers: 16,
            posemb_freqs: 8,
            mlp_hidden: 4 * 768,
        }
    }

    pub fn toy() -> Self {
        Self {
            latent_tokens: 64,
            channels: 64,
            width: 32,
            heads: 4,
            enc_layers: 1,
            dec_layers: 2,
            posemb_freqs: 6,
            mlp_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.channels == 0 || self.latent_tokens == 0 || self.mlp_hidden == 0 {
            return Err(NnError::InvalidConfig("zero-sized dimension".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        3 + 6 * self.posemb_freqs
    }
}

/// `[x, sin(2^f·π·x_a), cos(2^f·π·x_a)]` for `f < freqs`, `a ∈ {x, y, z}`.
pub fn point_embedding(p: &Vec3, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * freqs);
    out.extend_from_slice(p.as_slice());
    for f in 0..freqs {
        let w = std::f64::consts::PI * (1u64 << f) as f64;
        for a in 0..3 {
            out.push((w * p[a]).sin());
            out.push((w * p[a]).cos());
        }
    }
    out
}

/// Greedy farthest-point subsampling starting at `start`; ties go to the
/// lowest index.
pub fn farthest_point_sample(points: &[Vec3], m: usize, start: usize) -> Result<Vec<usize>> {
    if points.len() < m {
        return Err(NnError::TooFewPoints {
            have: points.len(),
            need: m,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(NnError::Domain(format!("start index {start} ≥ {}", points.len())));
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut chosen = Vec::with_capacity(m);
    let mut cur = start;
    for _ in 0..m {
        chosen.push(cur);
        let c = points[cur];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        cur = best.1;
    }
    Ok(chosen)
}

/// Pre-normalized self-attention and MLP residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfLayer {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl SelfLayer {
    fn random(c: &VaeArchConfig, rng: &mut impl Rng) -> Self {
        Self {
            norm1: LayerNorm::new(c.width),
            attn: Attention::random(c.width, c.width, c.heads, rng),
            norm2: LayerNorm::new(c.width),
            mlp: Mlp::random(c.width, c.mlp_hidden, rng),
        }
    }

    pub fn forward(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.norm1.forward(z)?;
        let z = &z + &self.attn.forward(h.view(), h.view())?;
        let h = self.norm2.forward(z.view())?;
        Ok(&z + &self.mlp.forward(h.view())?)
    }
}

impl Params for SelfLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
    }
}

/// Queries attend to a context set, followed by an MLP residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossLayer {
    pub norm_q: LayerNorm,
    pub norm_ctx: LayerNorm,
    pub attn: Attention,
    pub norm_ff: LayerNorm,
    pub mlp: Mlp,
}

impl CrossLayer {
    fn random(c: &VaeArchConfig, rng: &mut impl Rng) -> Self {
        Self {
            norm_q: LayerNorm::new(c.width),
            norm_ctx: LayerNorm::new(c.width),
            attn: Attention::random(c.width, c.width, c.heads, rng),
            norm_ff: LayerNorm::new(c.width),
            mlp: Mlp::random(c.width, c.mlp_hidden, rng),
        }
    }

    pub fn forward(&self, q: ArrayView2<f64>, ctx: ArrayView2<f64>) -> Result<Array2<f64>> {
        let hq = self.norm_q.forward(q)?;
        let hc = self.norm_ctx.forward(ctx)?;
        let z = &q + &self.attn.forward(hq.view(), hc.view())?;
        let h = self.norm_ff.forward(z.view())?;
        Ok(&z + &self.mlp.forward(h.view())?)
    }
}

impl Params for CrossLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm_q.visit(&format!("{prefix}.norm_q"), f);
        self.norm_ctx.visit(&format!("{prefix}.norm_ctx"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm_ff.visit(&format!("{prefix}.norm_ff"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm_q.visit_mut(&format!("{prefix}.norm_q"), f);
        self.norm_ctx.visit_mut(&format!("{prefix}.norm_ctx"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm_ff.visit_mut(&format!("{prefix}.norm_ff"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecSetEncoder {
    pub config: VaeArchConfig,
    pub in_proj: Linear,
    pub cross: CrossLayer,
    pub layers: Vec<SelfLayer>,
    /// Width → `2C` (means, then log-variances).
    pub head: Linear,
}

impl VecSetEncoder {
    pub fn random(config: &VaeArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            in_proj: Linear::random(config.embedding_dim() + 3, config.width, &mut rng),
            cross: CrossLayer::random(config, &mut rng),
            layers: (0..config.enc_layers).map(|_| SelfLayer::random(config, &mut rng)).collect(),
            head: Linear::random(config.width, 2 * config.channels, &mut rng),
        })
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        weights::write_sfma(out, &self.config, self)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        Ok(weights::read_sfma(input, |c: &VaeArchConfig| Self::random(c, 0))?.1)
    }
}

impl Params for VecSetEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.in_proj.visit(&format!("{prefix}.in_proj"), f);
        self.cross.visit(&format!("{prefix}.cross"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layers.{i}"), f);
        }
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.in_proj.visit_mut(&format!("{prefix}.in_proj"), f);
        self.cross.visit_mut(&format!("{prefix}.cross"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layers.{i}"), f);
        }
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    /// Indices of the subsampled query points, in selection order.
    pub indices: Vec<usize>,
    pub posterior: LatentGaussian,
    /// Reparameterized draw, `M × C`.
    pub latent: Array2<f64>,
}

fn oriented_embedding(points: &[Vec3], normals: &[Vec3], freqs: usize) -> Array2<f64> {
    let dim = 3 + 6 * freqs + 3;
    let mut out = Array2::zeros((points.len(), dim));
    for (mut row, (p, n)) in out.rows_mut().into_iter().zip(points.iter().zip(normals)) {
        let e = point_embedding(p, freqs);
        for (dst, v) in row.iter_mut().zip(e.iter().chain(n.as_slice())) {
            *dst = *v;
        }
    }
    out
}

/// Encodes `points` with `normals` into `m` latent tokens. The position
/// embedding is absolute, so translating the cloud changes the latents.
pub fn encode_pointcloud(
    points: &[Vec3],
    normals: &[Vec3],
    m: usize,
    fps_start: usize,
    seed: u64,
    enc: &VecSetEncoder,
) -> Result<EncodeOutput> {
    if points.len() != normals.len() {
        return Err(shape_err("normals", normals.len(), points.len()));
    }
    let indices = farthest_point_sample(points, m, fps_start)?;
    let freqs = enc.config.posemb_freqs;
    let full = enc.in_proj.forward(oriented_embedding(points, normals, freqs).view())?;
    let queries = full.select(Axis(0), &indices);
    let mut z = enc.cross.forward(queries.view(), full.view())?;
    for layer in &enc.layers {
        z = layer.forward(z.view())?;
    }
    let stats = enc.head.forward(z.view())?;
    let c = enc.config.channels;
    let posterior = LatentGaussian::new(
        stats.slice(ndarray::s![.., ..c]).to_owned(),
        stats.slice(ndarray::s![.., c..]).to_owned(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Array2::from_shape_simple_fn(posterior.mu.raw_dim(), || rng.sample(StandardNormal));
    let latent = posterior.reparameterize(&eps)?;
    Ok(EncodeOutput {
        indices,
        posterior,
        latent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecSetDecoder {
    pub config: VaeArchConfig,
    pub latent_proj: Linear,
    pub layers: Vec<SelfLayer>,
    pub query_proj: Linear,
    pub cross: CrossLayer,
    pub head: Linear,
}

impl VecSetDecoder {
    pub fn random(config: &VaeArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            latent_proj: Linear::random(config.channels, config.width, &mut rng),
            layers: (0..config.dec_layers).map(|_| SelfLayer::random(config, &mut rng)).collect(),
            query_proj: Linear::random(config.embedding_dim(), config.width, &mut rng),
            cross: CrossLayer::random(config, &mut rng),
            head: Linear::random(config.width, 1, &mut rng),
        })
    }

    /// Runs the self-attention stack once; the result serves any number of
    /// queries.
    pub fn prepare(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        if latent.ncols() != self.config.channels || latent.nrows() == 0 {
            return Err(shape_err("latent", latent.dim(), ("≥1", self.config.channels)));
        }
        let mut z = self.latent_proj.forward(latent)?;
        for layer in &self.layers {
            z = layer.forward(z.view())?;
        }
        Ok(z)
    }

    pub fn query(&self, tokens: ArrayView2<f64>, x: &[Vec3]) -> Result<Vec<f64>> {
        let freqs = self.config.posemb_freqs;
        let dim = self.config.embedding_dim();
        let mut emb = Array2::zeros((x.len(), dim));
        for (mut row, p) in emb.rows_mut().into_iter().zip(x) {
            row.assign(&ndarray::Array1::from(point_embedding(p, freqs)));
        }
        let q = self.query_proj.forward(emb.view())?;
        let h = self.cross.forward(q.view(), tokens)?;
        Ok(self.head.forward(h.view())?.column(0).to_vec())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        weights::write_sfma(out, &self.config, self)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        Ok(weights::read_sfma(input, |c: &VaeArchConfig| Self::random(c, 0))?.1)
    }
}

impl Params for VecSetDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.latent_proj.visit(&format!("{prefix}.latent_proj"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layers.{i}"), f);
        }
        self.query_proj.visit(&format!("{prefix}.query_proj"), f);
        self.cross.visit(&format!("{prefix}.cross"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.latent_proj.visit_mut(&format!("{prefix}.latent_proj"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layers.{i}"), f);
        }
        self.query_proj.visit_mut(&format!("{prefix}.query_proj"), f);
        self.cross.visit_mut(&format!("{prefix}.cross"), f);
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }
}

/// Signed distance at each query point given `M × C` latent tokens.
pub fn decode_sdf(latent: ArrayView2<f64>, x: &[Vec3], dec: &VecSetDecoder) -> Result<Vec<f64>> {
    let tokens = dec.prepare(latent)?;
    dec.query(tokens.view(), x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_on_a_line() {
        let pts: Vec<Vec3> = (0..11).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample(&pts, 3, 0).unwrap(), vec![0, 10, 5]);
        assert_eq!(farthest_point_sample(&pts, 2, 4).unwrap(), vec![4, 10]);
        assert!(matches!(
            farthest_point_sample(&pts, 12, 0),
            Err(NnError::TooFewPoints { have: 11, need: 12 })
        ));
    }

    #[test]
    fn embedding_layout() {
        let e = point_embedding(&Vec3::new(0.5, 0.0, -0.25), 2);
        assert_eq!(e.len(), 15);
        assert_eq!(&e[..3], &[0.5, 0.0, -0.25]);
        // first octave, x axis: sin(π/2), cos(π/2)
        assert!((e[3] - 1.0).abs() < 1e-15 && e[4].abs() < 1e-15);
    }

    #[test]
    fn weights_roundtrip() {
        let cfg = VaeArchConfig::toy();
        let dec = VecSetDecoder::random(&cfg, 4).unwrap();
        let mut buf = Vec::new();
        dec.write_to(&mut buf).unwrap();
        let back = VecSetDecoder::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.param_count(), dec.param_count());
        let enc = VecSetEncoder::random(&cfg, 4).unwrap();
        let mut buf = Vec::new();
        enc.write_to(&mut buf).unwrap();
        assert!(VecSetDecoder::read_from(&mut buf.as_slice()).is_err());
    }
}
