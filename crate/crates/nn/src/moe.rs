//! Mixture-of-experts feed-forward block: softmax gate, top-k routing with
//! renormalized weights, a shared expert applied to every token, and the
//! load-balancing auxiliary loss.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::layers::{softmax_rows, LayerNorm, Linear, Mlp};
use crate::weights::Params;
use crate::{shape_err, NnError, Result};

/// Pre-normalized dense FFN residual `z + mlp(norm(z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFfn {
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

impl DenseFfn {
    pub fn random(width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm: LayerNorm::new(width),
            mlp: Mlp::random(width, hidden, rng),
        }
    }

    pub fn forward(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let zn = self.norm.forward(z)?;
        Ok(&z + &self.mlp.forward(zn.view())?)
    }
}

impl Params for DenseFfn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeBlockParams {
    pub norm: LayerNorm,
    pub experts: Vec<Mlp>,
    pub shared_expert: Mlp,
    /// Width → expert-count logits.
    pub gate: Linear,
    pub k: usize,
}

impl MoeBlockParams {
    pub fn random(width: usize, hidden: usize, experts: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        check_k(k, experts)?;
        Ok(Self {
            norm: LayerNorm::new(width),
            experts: (0..experts).map(|_| Mlp::random(width, hidden, rng)).collect(),
            shared_expert: Mlp::random(width, hidden, rng),
            gate: Linear::random(width, experts, rng),
            k,
        })
    }

    pub fn zeros(width: usize, hidden: usize, experts: usize, k: usize) -> Result<Self> {
        check_k(k, experts)?;
        Ok(Self {
            norm: LayerNorm::new(width),
            experts: (0..experts).map(|_| Mlp::zeros(width, hidden)).collect(),
            shared_expert: Mlp::zeros(width, hidden),
            gate: Linear::zeros(width, experts),
            k,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }
}

impl Params for MoeBlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        for (i, e) in self.experts.iter().enumerate() {
            e.visit(&format!("{prefix}.experts.{i}"), f);
        }
        self.shared_expert.visit(&format!("{prefix}.shared"), f);
        self.gate.visit(&format!("{prefix}.gate"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        for (i, e) in self.experts.iter_mut().enumerate() {
            e.visit_mut(&format!("{prefix}.experts.{i}"), f);
        }
        self.shared_expert.visit_mut(&format!("{prefix}.shared"), f);
        self.gate.visit_mut(&format!("{prefix}.gate"), f);
    }
}

fn check_k(k: usize, experts: usize) -> Result<()> {
    if k == 0 || k > experts {
        return Err(NnError::InvalidConfig(format!("need 1 ≤ k ≤ {experts}, got k = {k}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub k: usize,
    /// Per token, the chosen experts in descending probability.
    pub experts: Vec<Vec<usize>>,
    /// Per token, the chosen probabilities renormalized to sum to 1.
    pub weights: Vec<Vec<f64>>,
    /// Full softmax, tokens × experts.
    pub probs: Array2<f64>,
    /// `f_i`: `k` times the fraction of tokens whose top-ranked expert is
    /// `i`, so that `Σ f_i = k`.
    pub fraction: Vec<f64>,
    /// `P_i`: mean softmax probability of expert `i`.
    pub mean_prob: Vec<f64>,
}

/// Softmax over the logits of each token, top-`k` selection with ties going
/// to the lower expert index, renormalization of the selected probabilities.
pub fn gate_topk(logits: ArrayView2<f64>, k: usize) -> Result<RoutingDecision> {
    let e = logits.ncols();
    check_k(k, e)?;
    let t = logits.nrows();
    let probs = softmax_rows(logits.to_owned());
    let mut experts = Vec::with_capacity(t);
    let mut weights = Vec::with_capacity(t);
    let mut top1 = vec![0usize; e];
    for row in probs.rows() {
        let mut order: Vec<usize> = (0..e).collect();
        // stable sort keeps lower indices first among equal probabilities
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        order.truncate(k);
        let total: f64 = order.iter().map(|&i| row[i]).sum();
        weights.push(order.iter().map(|&i| row[i] / total).collect());
        top1[order[0]] += 1;
        experts.push(order);
    }
    let denom = t.max(1) as f64;
    let fraction = top1.iter().map(|&c| k as f64 * c as f64 / denom).collect();
    let mean_prob = if t == 0 {
        vec![0.0; e]
    } else {
        probs.mean_axis(Axis(0)).expect("non-empty").to_vec()
    };
    Ok(RoutingDecision {
        k,
        experts,
        weights,
        probs,
        fraction,
        mean_prob,
    })
}

/// `z + shared(z̃) + Σ_selected w·expert(z̃)` with `z̃ = norm(z)`. Tokens are
/// gathered per expert, processed, and scattered back to their original rows.
pub fn moe_forward(z: ArrayView2<f64>, params: &MoeBlockParams) -> Result<(Array2<f64>, RoutingDecision)> {
    let width = params.norm.gamma.len();
    if z.ncols() != width {
        return Err(shape_err("moe token width", z.ncols(), width));
    }
    let zn = params.norm.forward(z)?;
    let decision = gate_topk(params.gate.forward(zn.view())?.view(), params.k)?;
    let mut out = &z + &params.shared_expert.forward(zn.view())?;
    for (ei, expert) in params.experts.iter().enumerate() {
        let mut rows = Vec::new();
        let mut gains = Vec::new();
        for (tok, (chosen, w)) in decision.experts.iter().zip(&decision.weights).enumerate() {
            if let Some(slot) = chosen.iter().position(|&c| c == ei) {
                rows.push(tok);
                gains.push(w[slot]);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let routed = expert.forward(zn.select(Axis(0), &rows).view())?;
        for ((&tok, &g), y) in rows.iter().zip(&gains).zip(routed.rows()) {
            out.row_mut(tok).scaled_add(g, &y);
        }
    }
    Ok((out, decision))
}

/// `E · Σ_i f_i · P_i`. Equals `k` under perfectly uniform routing and
/// approaches `E·k` as all tokens collapse onto one expert.
pub fn aux_balance_loss(decision: &RoutingDecision) -> f64 {
    let e = decision.fraction.len() as f64;
    e * decision
        .fraction
        .iter()
        .zip(&decision.mean_prob)
        .map(|(f, p)| f * p)
        .sum::<f64>()
}

/// Every expert and the shared expert become copies of the dense MLP; the
/// gate starts at zero so all experts tie.
pub fn init_moe_from_dense(dense: &DenseFfn, experts: usize, k: usize) -> Result<MoeBlockParams> {
    check_k(k, experts)?;
    let width = dense.norm.gamma.len();
    Ok(MoeBlockParams {
        norm: dense.norm.clone(),
        experts: vec![dense.mlp.clone(); experts],
        shared_expert: dense.mlp.clone(),
        gate: Linear::zeros(width, experts),
        k,
    })
}
