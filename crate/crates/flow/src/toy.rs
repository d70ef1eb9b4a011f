//! Rectified-flow training of a two-layer velocity network on small
//! low-dimensional distributions, with hand-written backpropagation and
//! plain SGD.
//!
//! Checkpoint layout (little-endian): `b"SFRF"`, version u32 (= 1),
//! dim u32, hidden u32, then the f64 parameters in [`ToyVelocityNet::params`]
//! order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::euler::euler_sample;
use crate::schedule::{rf_interpolate, rf_velocity_target};
use crate::timestep::LogitNormalSampler;
use crate::{FlowError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFRF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_SAMPLING_STEPS: usize = 200;

/// `v(x, t) = W2 · tanh(W1 · [x; t] + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVelocityNet {
    dim: usize,
    hidden: usize,
    /// `hidden × (dim + 1)`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `dim × hidden`, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// One supervised example: network input `(x, t)` and velocity target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub t: f64,
    pub target: Vec<f64>,
}

impl ToyVelocityNet {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(FlowError::InvalidParameter(format!("dim {dim}, hidden {hidden}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize, n: usize| -> Vec<f64> {
            let a = (3.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = uniform(dim + 1, hidden * (dim + 1));
        let w2 = uniform(hidden, dim * hidden);
        Ok(Self {
            dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flattened parameters: `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(FlowError::ShapeMismatch(p.len(), self.param_count()));
        }
        let mut rest = p;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn hidden_act(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = self.dim + 1;
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * k..(j + 1) * k];
                let pre = row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim] * t + self.b1[j];
                pre.tanh()
            })
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                self.w2[i * self.hidden..(i + 1) * self.hidden]
                    .iter()
                    .zip(h)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.b2[i]
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.output(&self.hidden_act(x, t))
    }

    /// Mean squared error over batch and components.
    pub fn loss(&self, batch: &[Example]) -> f64 {
        let n = (batch.len() * self.dim) as f64;
        batch
            .iter()
            .map(|e| {
                self.forward(&e.x, e.t)
                    .iter()
                    .zip(&e.target)
                    .map(|(y, g)| (y - g) * (y - g))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Loss and its gradient with respect to [`params`](Self::params).
    pub fn loss_and_grad(&self, batch: &[Example]) -> (f64, Vec<f64>) {
        let (d, hn, k) = (self.dim, self.hidden, self.dim + 1);
        let n = (batch.len() * d) as f64;
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; hn];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; d];
        let mut loss = 0.0;
        for e in batch {
            let h = self.hidden_act(&e.x, e.t);
            let y = self.output(&h);
            let dy: Vec<f64> = y
                .iter()
                .zip(&e.target)
                .map(|(y, g)| {
                    loss += (y - g) * (y - g);
                    2.0 * (y - g) / n
                })
                .collect();
            let mut dh = vec![0.0; hn];
            for i in 0..d {
                gb2[i] += dy[i];
                for j in 0..hn {
                    gw2[i * hn + j] += dy[i] * h[j];
                    dh[j] += self.w2[i * hn + j] * dy[i];
                }
            }
            for j in 0..hn {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                gb1[j] += da;
                let row = &mut gw1[j * k..(j + 1) * k];
                for (g, v) in row.iter_mut().zip(e.x.iter().chain(std::iter::once(&e.t))) {
                    *g += da * v;
                }
            }
        }
        (loss / n, [gw1, gb1, gw2, gb2].concat())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u32::<LittleEndian>(self.dim as u32)?;
        out.write_u32::<LittleEndian>(self.hidden as u32)?;
        for p in self.params() {
            out.write_f64::<LittleEndian>(p)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(FlowError::Format("bad magic".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(FlowError::Format(format!("unsupported version {version}")));
        }
        let dim = input.read_u32::<LittleEndian>()? as usize;
        let hidden = input.read_u32::<LittleEndian>()? as usize;
        let mut net = Self::new(dim, hidden, 0).map_err(|e| FlowError::Format(e.to_string()))?;
        let p: Vec<f64> = (0..net.param_count())
            .map(|_| input.read_f64::<LittleEndian>())
            .collect::<std::io::Result<_>>()?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Format("non-finite weight".into()));
        }
        net.set_params(&p)?;
        Ok(net)
    }

    /// Draws `count` samples by Euler integration from standard normal noise.
    pub fn generate(&self, count: usize, steps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let eps: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                euler_sample(|x, t| self.forward(x, t), &eps, steps, None)
            })
            .collect()
    }
}

/// Built-in target distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyTarget {
    PointMass { at: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl ToyTarget {
    pub fn dim(&self) -> usize {
        match self {
            Self::PointMass { at } => at.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Self::PointMass { at } => at.clone(),
            Self::Gaussian { mean, std } => mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + std * z
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch: 512,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ToyVelocityNet,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Consecutive steps above 10× the initial loss that count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 100;

/// Minimizes `‖net(x_t, t) − (x0 − eps)‖²` with `x_t = t·x0 + (1−t)·eps`,
/// `x0` from `dataset`, `eps ~ N(0, I)` and `t` from `sampler`.
pub fn train_toy_rf(
    mut dataset: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    mut net: ToyVelocityNet,
    sampler: &mut LogitNormalSampler,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.batch == 0 || !(cfg.learning_rate > 0.0) {
        return Err(FlowError::InvalidParameter(format!(
            "batch {} learning rate {}",
            cfg.batch, cfg.learning_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut params = net.params();
    let mut above = 0usize;
    for step in 0..cfg.steps {
        let batch: Vec<Example> = (0..cfg.batch)
            .map(|_| -> Result<Example> {
                let x0 = dataset(&mut rng);
                if x0.len() != net.dim() || x0.iter().any(|v| !v.is_finite()) {
                    return Err(FlowError::InvalidParameter("dataset produced an invalid point".into()));
                }
                let eps: Vec<f64> = (0..net.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let t = sampler.sample();
                Ok(Example {
                    x: rf_interpolate(&x0, &eps, t)?,
                    t,
                    target: rf_velocity_target(&x0, &eps)?,
                })
            })
            .collect::<Result<_>>()?;
        let (loss, grad) = net.loss_and_grad(&batch);
        if !loss.is_finite() {
            return Err(FlowError::DivergedLoss { step, loss });
        }
        losses.push(loss);
        if loss > 10.0 * losses[0] {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(FlowError::DivergedLoss { step, loss });
            }
        } else {
            above = 0;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        net.set_params(&params)?;
    }
    Ok(TrainOutcome { net, losses })
}

/// `step,loss` rows.
pub fn write_loss_csv(losses: &[f64], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{i},{l:.17e}")?;
    }
    Ok(())
}
