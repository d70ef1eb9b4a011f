//! Building blocks shared by the backbone and the VecSet VAE.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::weights::Params;
use crate::{shape_err, Result};

/// Floor on the RMS used when normalizing, so zero vectors stay zero.
pub const RMS_EPS: f64 = 1e-6;
pub const LAYERNORM_EPS: f64 = 1e-6;
/// Query rows processed per attention tile.
const QUERY_TILE: usize = 256;

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // √(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Row-wise `y = x·w + b` with `w` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Weights `N(0, 1/input)`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("positive std");
        Self {
            w: Array2::from_shape_simple_fn((input, output), || normal.sample(rng)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err("linear input width", x.ncols(), self.input_dim()));
        }
        Ok(x.dot(&self.w) + &self.b)
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.w"), self.w.shape(), self.w.as_slice().expect("standard layout"));
        f(&format!("{prefix}.b"), self.b.shape(), self.b.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.w.shape().to_vec();
        f(&format!("{prefix}.w"), &shape, self.w.as_slice_mut().expect("standard layout"));
        let shape = self.b.shape().to_vec();
        f(&format!("{prefix}.b"), &shape, self.b.as_slice_mut().expect("standard layout"));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.gamma.len() {
            return Err(shape_err("layer-norm width", x.ncols(), self.gamma.len()));
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            Zip::from(&mut row)
                .and(&self.gamma)
                .and(&self.beta)
                .for_each(|v, g, b| *v = (*v - mean) * inv * g + b);
        }
        Ok(out)
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.gamma"), self.gamma.shape(), self.gamma.as_slice().unwrap());
        f(&format!("{prefix}.beta"), self.beta.shape(), self.beta.as_slice().unwrap());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.gamma.shape().to_vec();
        f(&format!("{prefix}.gamma"), &shape, self.gamma.as_slice_mut().unwrap());
        f(&format!("{prefix}.beta"), &shape, self.beta.as_slice_mut().unwrap());
    }
}

/// Divides each `head_dim`-wide slice of every row by its RMS (floored at
/// [`RMS_EPS`]) and multiplies by `scale`.
pub fn rmsnorm_heads(x: ArrayView2<f64>, heads: usize, scale: ArrayView1<f64>) -> Result<Array2<f64>> {
    if heads == 0 || x.ncols() % heads != 0 {
        return Err(shape_err("width divisible by heads", x.ncols(), heads));
    }
    let d = x.ncols() / heads;
    if scale.len() != d {
        return Err(shape_err("rms scale length", scale.len(), d));
    }
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for h in 0..heads {
            let mut seg = row.slice_mut(s![h * d..(h + 1) * d]);
            let rms = (seg.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt().max(RMS_EPS);
            Zip::from(&mut seg).and(&scale).for_each(|v, g| *v = *v / rms * g);
        }
    }
    Ok(out)
}

/// Two-layer perceptron `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn random(width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::random(width, hidden, rng),
            fc2: Linear::random(hidden, width, rng),
        }
    }

    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::zeros(width, hidden),
            fc2: Linear::zeros(hidden, width),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.fc1.forward(x)?.mapv_into(gelu);
        self.fc2.forward(h.view())
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

/// Multi-head attention with RMS-normalized queries and keys. Keys and
/// values may come from a context of a different width (cross-attention).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub q_scale: Array1<f64>,
    pub k_scale: Array1<f64>,
}

impl Attention {
    pub fn random(width: usize, context: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let d = width / heads;
        Self {
            heads,
            wq: Linear::random(width, width, rng),
            wk: Linear::random(context, width, rng),
            wv: Linear::random(context, width, rng),
            wo: Linear::random(width, width, rng),
            q_scale: Array1::ones(d),
            k_scale: Array1::ones(d),
        }
    }

    pub fn zeros(width: usize, context: usize, heads: usize) -> Self {
        let d = width / heads;
        Self {
            heads,
            wq: Linear::zeros(width, width),
            wk: Linear::zeros(context, width),
            wv: Linear::zeros(context, width),
            wo: Linear::zeros(width, width),
            q_scale: Array1::zeros(d),
            k_scale: Array1::zeros(d),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.wq.output_dim() / self.heads
    }

    fn project(&self, x: ArrayView2<f64>, ctx: ArrayView2<f64>) -> Result<[Array2<f64>; 3]> {
        let q = rmsnorm_heads(self.wq.forward(x)?.view(), self.heads, self.q_scale.view())?;
        let k = rmsnorm_heads(self.wk.forward(ctx)?.view(), self.heads, self.k_scale.view())?;
        let v = self.wv.forward(ctx)?;
        Ok([q, k, v])
    }

    /// Softmax attention matrices, one `Lq × Lk` array per head.
    pub fn attention_weights(&self, x: ArrayView2<f64>, ctx: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let [q, k, _] = self.project(x, ctx)?;
        let d = self.head_dim();
        Ok((0..self.heads)
            .map(|h| {
                let cols = s![.., h * d..(h + 1) * d];
                softmax_rows(q.slice(cols).dot(&k.slice(cols).t()) / (d as f64).sqrt())
            })
            .collect())
    }

    pub fn forward(&self, x: ArrayView2<f64>, ctx: ArrayView2<f64>) -> Result<Array2<f64>> {
        if ctx.nrows() == 0 {
            return Err(shape_err("attention context rows", 0, "≥ 1"));
        }
        let [q, k, v] = self.project(x, ctx)?;
        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut mixed = Array2::<f64>::zeros(q.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * d..(h + 1) * d];
            let (kh, vh) = (k.slice(cols), v.slice(cols));
            let mut start = 0;
            while start < q.nrows() {
                let end = (start + QUERY_TILE).min(q.nrows());
                let qt = q.slice(s![start..end, h * d..(h + 1) * d]);
                let p = softmax_rows(qt.dot(&kh.t()) * scale);
                mixed.slice_mut(s![start..end, h * d..(h + 1) * d]).assign(&p.dot(&vh));
                start = end;
            }
        }
        self.wo.forward(mixed.view())
    }
}

impl Params for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
        f(&format!("{prefix}.q_scale"), self.q_scale.shape(), self.q_scale.as_slice().unwrap());
        f(&format!("{prefix}.k_scale"), self.k_scale.shape(), self.k_scale.as_slice().unwrap());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.wq.visit_mut(&format!("{prefix}.wq"), f);
        self.wk.visit_mut(&format!("{prefix}.wk"), f);
        self.wv.visit_mut(&format!("{prefix}.wv"), f);
        self.wo.visit_mut(&format!("{prefix}.wo"), f);
        let shape = self.q_scale.shape().to_vec();
        f(&format!("{prefix}.q_scale"), &shape, self.q_scale.as_slice_mut().unwrap());
        f(&format!("{prefix}.k_scale"), &shape, self.k_scale.as_slice_mut().unwrap());
    }
}

pub fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // tanh approximation values
        assert!((gelu(1.0) - 0.841_191_990_608_276_7).abs() < 1e-12);
        assert!((gelu(-3.0) + 0.003_637_392_081_773_0).abs() < 1e-12);
        assert!((silu(0.0)).abs() < 1e-15);
    }

    #[test]
    fn layernorm_zero_mean_unit_var() {
        let ln = LayerNorm::new(4);
        let y = ln.forward(array![[1.0, 2.0, 3.0, 6.0]].view()).unwrap();
        let mean = y.sum() / 4.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att = Attention::random(16, 8, 4, &mut rng);
        let x = Array2::from_shape_fn((5, 16), |(i, j)| ((i * 7 + j) as f64).sin());
        let c = Array2::from_shape_fn((9, 8), |(i, j)| ((i * 3 + j) as f64).cos());
        for p in att.attention_weights(x.view(), c.view()).unwrap() {
            assert_eq!(p.dim(), (5, 9));
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(att.forward(x.view(), c.view()).unwrap().dim(), (5, 16));
        assert!(att.forward(c.view(), c.view()).is_err());
    }

    #[test]
    fn tiled_attention_matches_untiled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let att = Attention::random(8, 8, 2, &mut rng);
        let x = Array2::from_shape_fn((600, 8), |(i, j)| ((i * 13 + j * 5) as f64 * 0.01).sin());
        let tiled = att.forward(x.view(), x.view()).unwrap();
        let v = att.wv.forward(x.view()).unwrap();
        let mut mixed = Array2::zeros((600, 8));
        for (h, p) in att.attention_weights(x.view(), x.view()).unwrap().into_iter().enumerate() {
            mixed.slice_mut(s![.., h * 4..(h + 1) * 4]).assign(&p.dot(&v.slice(s![.., h * 4..(h + 1) * 4])));
        }
        let direct = att.wo.forward(mixed.view()).unwrap();
        let err = (&tiled - &direct).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12, "{err}");
    }
}
