use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::nn::{sinusoidal_embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
struct Block {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// `φ_θ(h_t, t, c)`: predicts `h_f` from the current state. Each block
/// cross-attends from the state token to the condition token, then applies
/// a GELU feed-forward; both branches are residual and pre-normalised. The
/// output is `h_t` plus a learned correction, so a zero output layer makes
/// `φ_θ` the identity.
#[derive(Clone, Debug)]
pub struct DenoiserNet {
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    out: Linear,
    dim: usize,
}

impl DenoiserNet {
    /// The output projection starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        blocks: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|b| {
                let p = format!("{name}.block{b}");
                Ok(Block {
                    ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), dim),
                    attn: MultiHeadAttention::new(store, &format!("{p}.cross"), dim, heads, rng)?,
                    ln_ffn: LayerNorm::new(store, &format!("{p}.ln_ffn"), dim),
                    ffn: FeedForward::new(store, &format!("{p}.ffn"), dim, hidden, rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(store, &format!("{name}.out"), dim, dim, true, rng);
        out.zero_init(store);
        Ok(Self {
            blocks,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), dim),
            out,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for b in &self.blocks {
            p.extend([b.ln_attn.gain, b.ln_attn.bias, b.ln_ffn.gain, b.ln_ffn.bias]);
            for lin in [&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.out, &b.ffn.up, &b.ffn.down] {
                p.extend(lin.params());
            }
        }
        p.extend([self.ln_out.gain, self.ln_out.bias]);
        p.extend(self.out.params());
        p
    }

    /// `h_t` is `B × D`, `steps` holds one timestep per row, `c` is `1 × D`
    /// (the condition branch is skipped when absent).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_t: Var,
        steps: &[usize],
        c: Option<Var>,
    ) -> Result<Var> {
        let shape = tape.value(h_t).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim || shape[0] != steps.len() {
            return Err(shape_err!(
                "denoiser expects {} × {}, got {:?}",
                steps.len(),
                self.dim,
                shape
            ));
        }
        if let Some(c) = c {
            if tape.value(c).shape() != [1, self.dim] {
                return Err(shape_err!("condition must be 1 × {}, got {:?}", self.dim, tape.value(c).shape()));
            }
        }
        let rows: Vec<DenseArray> = steps.iter().map(|&t| sinusoidal_embedding(t, self.dim)).collect();
        let refs: Vec<&DenseArray> = rows.iter().collect();
        let temb = tape.constant(DenseArray::vstack(&refs)?);
        let mut x = tape.add(h_t, temb)?;
        for b in &self.blocks {
            if let Some(c) = c {
                let h = b.ln_attn.forward(tape, store, x)?;
                let a = b.attn.forward(tape, store, h, c)?;
                x = tape.add(x, a.output)?;
            }
            let h = b.ln_ffn.forward(tape, store, x)?;
            let f = b.ffn.forward(tape, store, h)?;
            x = tape.add(x, f)?;
        }
        let h = self.ln_out.forward(tape, store, x)?;
        let r = self.out.forward(tape, store, h)?;
        tape.add(h_t, r)
    }
}
