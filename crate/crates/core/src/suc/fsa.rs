use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};

/// Where the aggregated vector is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Row 0, the shared token.
    #[default]
    Shared,
    Mean,
}

#[derive(Clone, Debug)]
struct FsaLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Pre-norm self-attention stack over the text tokens. No positional
/// encoding, so it is permutation-equivariant over the token rows.
#[derive(Clone, Debug)]
pub struct Fsa {
    layers: Vec<FsaLayer>,
    dim: usize,
}

impl Fsa {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        layers: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Ok(FsaLayer {
                    ln_attn: LayerNorm::new(store, &format!("{p}.ln_attn"), dim),
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), dim, heads, rng)?,
                    ln_ffn: LayerNorm::new(store, &format!("{p}.ln_ffn"), dim),
                    ffn: FeedForward::new(store, &format!("{p}.ffn"), dim, hidden, rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Zero every residual branch so the stack is the identity map.
    pub fn identity_init(&self, store: &mut ParamStore) {
        for l in &self.layers {
            l.attn.out.zero_init(store);
            l.ffn.down.zero_init(store);
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.ln_attn.gain, l.ln_attn.bias, l.ln_ffn.gain, l.ln_ffn.bias]);
            for lin in [&l.attn.q, &l.attn.k, &l.attn.v, &l.attn.out, &l.ffn.up, &l.ffn.down] {
                out.extend(lin.params());
            }
        }
        out
    }

    /// Runs the stack over `seq` (`tokens × dim`) and returns all rows.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var> {
        let mut x = seq;
        for l in &self.layers {
            let h = l.ln_attn.forward(tape, store, x)?;
            let a = l.attn.forward(tape, store, h, h)?;
            x = tape.add(x, a.output)?;
            let h = l.ln_ffn.forward(tape, store, x)?;
            let f = l.ffn.forward(tape, store, h)?;
            x = tape.add(x, f)?;
        }
        Ok(x)
    }

    /// `1 × dim` aggregate of `seq`.
    pub fn aggregate(&self, tape: &mut Tape, store: &ParamStore, seq: Var, readout: Readout) -> Result<Var> {
        let rows = tape.value(seq).rows();
        if rows < 1 || tape.value(seq).cols() != self.dim {
            return Err(Error::Shape(format!(
                "aggregator expects tokens × {}, got {:?}",
                self.dim,
                tape.value(seq).shape()
            )));
        }
        let x = self.encode(tape, store, seq)?;
        match readout {
            Readout::Shared => tape.slice_rows(x, 0, 1),
            Readout::Mean => tape.mean_rows(x),
        }
    }
}

/// `c` for a composed `(C+1) × D` text sequence, read at the shared token.
pub fn aggregate_condition(fsa: &Fsa, store: &ParamStore, seq: &DenseArray) -> Result<DenseArray> {
    if seq.rows() < 2 {
        return Err(Error::Shape(format!(
            "text sequence needs a shared token and at least one label, got {} rows",
            seq.rows()
        )));
    }
    let mut tape = Tape::new();
    let s = tape.constant(seq.clone());
    let c = fsa.aggregate(&mut tape, store, s, Readout::Shared)?;
    let out = tape.value(c).clone();
    out.ensure_finite("condition")?;
    Ok(out)
}
