//! Wiring and algebra probes over the backbone and MoE kernels, shared by
//! the test suite and the command-line verification runs. Each returns the
//! largest observed deviation from the value the structure predicts.

use crate::arch::{backbone_forward_traced, SkipProbe};
use crate::layers::{Attention, Mlp};
use crate::moe::{aux_balance_loss, gate_topk, init_moe_from_dense, moe_forward, DenseFfn};
use crate::{backbone_forward, ArchConfig, BackboneWeights, ConditionFeatures};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    (a - b).iter().fold(0.0f64, |m, d| m.max(d.abs()))
}

/// Toy backbone with two blocks per side.
pub fn toy_setup(seed: u64) -> (ArchConfig, BackboneWeights, ConditionFeatures) {
    let cfg = ArchConfig::toy();
    let w = BackboneWeights::random(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let cond = ConditionFeatures::random(&cfg, 3, 7, &mut rng);
    (cfg, w, cond)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipProbeReport {
    /// Worst error of `decoder[N−i] − baseline − δ` with identity blocks.
    pub identity_error: f64,
    /// Worst change of a decoder output that runs before `N−i`, with random
    /// weights (must be exactly zero).
    pub upstream_change: f64,
    /// Smallest change of decoder `N−i` with random weights (must be > 0).
    pub target_change: f64,
}

/// Perturbs the skip copy of each encoder block in turn.
pub fn skip_probe(seed: u64) -> SkipProbeReport {
    let (cfg, random_w, cond) = toy_setup(seed);
    let n = cfg.n_blocks;
    let mut identity_w = random_w.clone();
    for b in identity_w.encoder.iter_mut().chain(identity_w.decoder.iter_mut()) {
        b.zero_residual_outputs();
    }
    identity_w.middle.zero_residual_outputs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = gaussian(12, cfg.channels, &mut rng);
    let mut report = SkipProbeReport {
        identity_error: 0.0,
        upstream_change: 0.0,
        target_change: f64::INFINITY,
    };
    for i in 1..=n {
        let delta = gaussian(13, cfg.width, &mut rng);
        let probe = SkipProbe { encoder: i, delta: delta.clone() };
        let j = n - i;

        let base = backbone_forward_traced(x.view(), 0.3, &cond, &identity_w, None).unwrap();
        let hit = backbone_forward_traced(x.view(), 0.3, &cond, &identity_w, Some(&probe)).unwrap();
        let shift = &hit.decoder_outputs[j] - &base.decoder_outputs[j];
        report.identity_error = report.identity_error.max(max_abs_diff(&shift, &delta));

        let base = backbone_forward_traced(x.view(), 0.3, &cond, &random_w, None).unwrap();
        let hit = backbone_forward_traced(x.view(), 0.3, &cond, &random_w, Some(&probe)).unwrap();
        for up in 0..j {
            report.upstream_change = report
                .upstream_change
                .max(max_abs_diff(&hit.decoder_outputs[up], &base.decoder_outputs[up]));
        }
        let moved = max_abs_diff(&hit.decoder_outputs[j], &base.decoder_outputs[j]);
        report.target_change = report.target_change.min(moved);
    }
    report
}

/// Worst `|f(P·x) − P·f(x)|` over latent permutations.
pub fn backbone_permutation_error(seed: u64, tokens: usize) -> f64 {
    let (cfg, w, cond) = toy_setup(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let x = gaussian(tokens, cfg.channels, &mut rng);
    let out = backbone_forward(x.view(), 0.7, &cond, &w).unwrap();
    let mut perm: Vec<usize> = (0..tokens).collect();
    perm.shuffle(&mut rng);
    let px = x.select(Axis(0), &perm);
    let pout = backbone_forward(px.view(), 0.7, &cond, &w).unwrap();
    max_abs_diff(&pout, &out.select(Axis(0), &perm))
}

/// Runs one set of weights at each length; returns (length, finite, shape ok).
pub fn length_extrapolation(seed: u64, lengths: &[usize]) -> Vec<(usize, bool, bool)> {
    let (cfg, w, cond) = toy_setup(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    lengths
        .iter()
        .map(|&l| {
            let x = gaussian(l, cfg.channels, &mut rng);
            let v = backbone_forward(x.view(), 0.5, &cond, &w).unwrap();
            (l, v.iter().all(|c| c.is_finite()), v.dim() == (l, cfg.channels))
        })
        .collect()
}

/// Worst deviation of an inherited MoE block from `z + 2·mlp(norm(z))`.
pub fn moe_dense_equivalence_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = DenseFfn::random(64, 128, &mut rng);
    let moe = init_moe_from_dense(&dense, 8, 2).unwrap();
    let z = gaussian(50, 64, &mut rng);
    let (out, _) = moe_forward(z.view(), &moe).unwrap();
    let zn = dense.norm.forward(z.view()).unwrap();
    let want = &z + &(dense.mlp.forward(zn.view()).unwrap() * 2.0);
    max_abs_diff(&out, &want)
}

/// Aux loss at uniform routing, and along a path where a growing share of
/// tokens collapses onto expert 0.
pub fn aux_loss_path(experts: usize, k: usize) -> (f64, Vec<f64>) {
    let per_expert = 16;
    let t = experts * per_expert;
    let sharp = 30.0;
    let own = |tok: usize| tok % experts;
    let logits_for = |collapsed: usize| {
        // tokens owned by expert 0 are already there; collapse the rest first
        let order: Vec<usize> = (0..t).filter(|&tok| own(tok) != 0).collect();
        Array2::from_shape_fn((t, experts), |(tok, e)| {
            let target = if order[..collapsed.min(order.len())].contains(&tok) { 0 } else { own(tok) };
            if e == target {
                sharp
            } else {
                0.0
            }
        })
    };
    let uniform = aux_balance_loss(&gate_topk(logits_for(0).view(), k).unwrap());
    let movable = t - per_expert;
    let path = (0..=movable)
        .step_by(per_expert / 2)
        .map(|c| aux_balance_loss(&gate_topk(logits_for(c).view(), k).unwrap()))
        .collect();
    (uniform, path)
}

/// Attention logits after scaling the query input by `c`.
pub fn qk_scale_invariance_error(seed: u64, c: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let att = Attention::random(32, 20, 4, &mut rng);
    let x = gaussian(9, 32, &mut rng);
    let ctx = gaussian(11, 20, &mut rng);
    let a = att.attention_weights(x.view(), ctx.view()).unwrap();
    let b = att.attention_weights((x * c).view(), ctx.view()).unwrap();
    a.iter().zip(&b).map(|(p, q)| max_abs_diff(p, q)).fold(0.0, f64::max)
}

/// MoE with every expert equal to `f`: output must be `z + shared(z̃) + f(z̃)`.
pub fn identical_experts_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moe = crate::MoeBlockParams::random(32, 48, 8, 2, &mut rng).unwrap();
    let f = Mlp::random(32, 48, &mut rng);
    moe.experts = vec![f.clone(); 8];
    let z = gaussian(40, 32, &mut rng);
    let (out, _) = moe_forward(z.view(), &moe).unwrap();
    let zn = moe.norm.forward(z.view()).unwrap();
    let want = &z + &moe.shared_expert.forward(zn.view()).unwrap() + &f.forward(zn.view()).unwrap();
    max_abs_diff(&out, &want)
}
