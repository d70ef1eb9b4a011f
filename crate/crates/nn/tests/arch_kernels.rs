mod common;

use common::probes::*;
use meshflow_nn::probe::*;
use meshflow_nn::arch::{block_forward, BlockParams};
use meshflow_nn::moe::{aux_balance_loss, gate_topk, moe_forward, MoeBlockParams, RoutingDecision};
use meshflow_nn::{backbone_forward, BackboneWeights, ConditionFeatures};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn zeroed_residual_branches_make_a_block_the_identity() {
    let (cfg, _, cond) = toy_setup(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for moe in [false, true] {
        let mut block = BlockParams::random(&cfg, moe, &mut rng).unwrap();
        block.zero_residual_outputs();
        let z = gaussian(9, cfg.width, &mut rng);
        assert_eq!(block_forward(z.view(), &cond, &block).unwrap(), z);
    }
}

#[test]
fn block_is_equivariant_with_the_time_token_pinned() {
    let (cfg, w, cond) = toy_setup(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let time = gaussian(1, cfg.width, &mut rng);
    let lat = gaussian(20, cfg.width, &mut rng);
    let mut perm: Vec<usize> = (0..20).collect();
    perm.shuffle(&mut rng);
    for block in [&w.encoder[0], &w.decoder[1]] {
        let out = block_forward(with_time_row(&time, &lat).view(), &cond, block).unwrap();
        let pout = block_forward(with_time_row(&time, &lat.select(Axis(0), &perm)).view(), &cond, block).unwrap();
        assert_eq!(pout.dim(), (21, cfg.width));
        assert!(max_abs_diff(&pout.row(0).to_owned().insert_axis(Axis(0)), &out.row(0).to_owned().insert_axis(Axis(0))) < 1e-12);
        assert!(max_abs_diff(&latent_rows(&pout), &latent_rows(&out).select(Axis(0), &perm)) < 1e-12);
    }
}

#[test]
fn skip_wiring_matches_encoder_decoder_pairing() {
    let r = skip_probe(3);
    assert!(r.identity_error < 1e-12, "{}", r.identity_error);
    assert_eq!(r.upstream_change, 0.0);
    assert!(r.target_change > 1e-6);
}

#[test]
fn backbone_is_permutation_equivariant() {
    let err = backbone_permutation_error(4, 48);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backbone_runs_at_longer_lengths() {
    for (l, finite, shape) in length_extrapolation(5, &[512, 2048, 4096]) {
        assert!(finite && shape, "length {l}");
    }
}

#[test]
fn zero_weights_give_zero_velocity() {
    let (cfg, _, cond) = toy_setup(6);
    let w = BackboneWeights::zeros(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian(10, cfg.channels, &mut rng);
    let v = backbone_forward(x.view(), 0.2, &cond, &w).unwrap();
    assert!(v.iter().all(|&c| c == 0.0));
}

#[test]
fn shape_errors() {
    let (cfg, w, cond) = toy_setup(7);
    let x = Array2::zeros((4, cfg.channels + 1));
    assert!(backbone_forward(x.view(), 0.5, &cond, &w).is_err());
    let bad = ConditionFeatures {
        i_global: Array2::zeros((2, cfg.global_dim + 1)),
        i_local: cond.i_local.clone(),
    };
    let x = Array2::zeros((4, cfg.channels));
    assert!(backbone_forward(x.view(), 0.5, &bad, &w).is_err());
    assert!(backbone_forward(x.view(), -0.1, &cond, &w).is_err());
}

#[test]
fn inherited_moe_equals_doubled_dense_ffn() {
    let err = moe_dense_equivalence_error(8);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn identical_experts_collapse_to_one_ffn() {
    let err = identical_experts_error(9);
    assert!(err < 1e-12, "{err}");
}

#[test]
fn moe_is_token_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let moe = MoeBlockParams::random(32, 48, 8, 2, &mut rng).unwrap();
    let z = gaussian(30, 32, &mut rng);
    let mut perm: Vec<usize> = (0..30).collect();
    perm.shuffle(&mut rng);
    let (out, _) = moe_forward(z.view(), &moe).unwrap();
    let (pout, _) = moe_forward(z.select(Axis(0), &perm).view(), &moe).unwrap();
    assert!(max_abs_diff(&pout, &out.select(Axis(0), &perm)) < 1e-12);
}

#[test]
fn aux_loss_rises_from_two_to_sixteen_as_routing_collapses() {
    let (uniform, path) = aux_loss_path(8, 2);
    assert!((uniform - 2.0).abs() < 1e-12, "{uniform}");
    assert!((path[0] - 2.0).abs() < 1e-12);
    assert!(path.windows(2).all(|w| w[1] > w[0]), "{path:?}");
    assert!((path.last().unwrap() - 16.0).abs() < 1e-9);
}

fn decision_from_probs(p: &[f64], k: usize) -> RoutingDecision {
    let logits = Array2::from_shape_fn((1, p.len()), |(_, i)| p[i].ln());
    let mut d = gate_topk(logits.view(), k).unwrap();
    d.fraction = p.iter().map(|v| v * k as f64).collect();
    d.mean_prob = p.to_vec();
    d
}

#[test]
fn aux_loss_random_search_never_beats_uniform_routing() {
    // routing fractions that follow the gate probabilities, f = k·P
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let uniform = aux_balance_loss(&decision_from_probs(&[1.0 / 8.0; 8], 2));
    assert!((uniform - 2.0).abs() < 1e-12);
    for _ in 0..10_000 {
        let raw: Vec<f64> = (0..8).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        assert!(aux_balance_loss(&decision_from_probs(&p, 2)) >= uniform - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qk_norm_removes_query_scale(seed in 0u64..1000, c in 1e-3f64..1e3) {
        prop_assert!(qk_scale_invariance_error(seed, c) < 1e-6);
    }

    #[test]
    fn routing_weights_are_normalized(seed in 0u64..1000, k in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_simple_fn((17, 8), || rng.random_range(-5.0..5.0));
        let d = gate_topk(logits.view(), k).unwrap();
        prop_assert!((d.fraction.iter().sum::<f64>() - k as f64).abs() < 1e-12);
        for (ex, w) in d.experts.iter().zip(&d.weights) {
            prop_assert_eq!(ex.len(), k);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
        }
        prop_assert!(aux_balance_loss(&d) >= 0.0);
    }
}
