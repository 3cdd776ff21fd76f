use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::nn::{LayerNorm, Linear};
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
struct ConvLayer {
    conv: Linear,
    norm: LayerNorm,
    dilation: usize,
}

/// Input projection followed by residual masked kernel-3 convolutions with
/// dilations 1, 2, 4, …; rows at or beyond `valid_len` are exactly zero.
#[derive(Clone, Debug)]
pub struct TemporalBackbone {
    input: Linear,
    layers: Vec<ConvLayer>,
    in_dim: usize,
    dim: usize,
}

pub const KERNEL: usize = 3;

impl TemporalBackbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        in_dim: usize,
        dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let input = Linear::new(store, "backbone.input", in_dim, dim, true, rng);
        let layers = (0..layers)
            .map(|k| ConvLayer {
                conv: Linear::new(store, &format!("backbone.conv{k}"), KERNEL * dim, dim, true, rng),
                norm: LayerNorm::new(store, &format!("backbone.norm{k}"), dim),
                dilation: 1 << k.min(16),
            })
            .collect();
        Self {
            input,
            layers,
            in_dim,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.input.params();
        for l in &self.layers {
            p.extend(l.conv.params());
            p.extend([l.norm.gain, l.norm.bias]);
        }
        p
    }

    /// `x` is `N × D_in`; returns `N × D`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, valid_len: usize) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(shape_err!("backbone expects N × {}, got {:?}", self.in_dim, shape));
        }
        let n = shape[0];
        if valid_len > n {
            return Err(Error::Precondition(format!("valid_len {valid_len} exceeds sequence length {n}")));
        }
        let mask = DenseArray::matrix(n, 1, (0..n).map(|i| if i < valid_len { 1.0 } else { 0.0 }).collect())?;
        let mask = tape.constant(mask);
        let x = tape.mul_col(x, mask)?;
        let p = self.input.forward(tape, store, x)?;
        let mut h = tape.mul_col(p, mask)?;
        for l in &self.layers {
            let u = tape.unfold(h, KERNEL, l.dilation)?;
            let y = l.conv.forward(tape, store, u)?;
            let y = tape.mul_col(y, mask)?;
            let y = l.norm.forward(tape, store, y)?;
            let y = tape.gelu(y);
            let sum = tape.add(h, y)?;
            h = tape.mul_col(sum, mask)?;
        }
        Ok(h)
    }
}

/// Array form of [`TemporalBackbone::forward`].
pub fn backbone_forward(
    backbone: &TemporalBackbone,
    store: &ParamStore,
    x: &DenseArray,
    valid_len: usize,
) -> Result<DenseArray> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.as_matrix());
    let y = backbone.forward(&mut tape, store, xv, valid_len)?;
    Ok(tape.value(y).clone())
}
