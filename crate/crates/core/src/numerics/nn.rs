//! Small layer building blocks shared by the model components.

use rand::Rng;

use super::{DenseArray, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_weight(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), &[1, out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn zero_init(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).value = DenseArray::zeros(&[self.in_dim, self.out_dim]);
        if let Some(b) = self.bias {
            store.get_mut(b).value = DenseArray::zeros(&[1, self.out_dim]);
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), DenseArray::filled(&[1, dim], 1.0)),
            bias: store.add_zeros(format!("{name}.bias"), &[1, dim]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.down.forward(tape, store, h)
    }
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs. Scores are scaled by `1/sqrt(dim)`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    /// Output after the output projection, before any residual.
    pub output: Var,
    /// Row-stochastic attention weights, one `[queries × keys]` per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(shape_err!("dim {dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
            dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, keys: Var) -> Result<AttentionOutput> {
        let q = self.q.forward(tape, store, queries)?;
        let k = self.k.forward(tape, store, keys)?;
        let v = self.v.forward(tape, store, keys)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let a = tape.softmax_rows(scores);
            outs.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let mixed = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let output = self.out.forward(tape, store, mixed)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Sinusoidal embedding of an integer step, `1 × dim`.
pub fn sinusoidal_embedding(step: usize, dim: usize) -> DenseArray {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = step as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    DenseArray::row_vector(out)
}
