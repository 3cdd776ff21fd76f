//! Foreground-prompt alignment: fold a prompt vector into every label
//! embedding, let video segments attend to the prompted labels, and score
//! segments against them.

mod losses;

pub use losses::{
    cls_loss, diou, diou_loss, fg_loss, total_loss, FgLossKind, LossParts, LossReport, LossWeights,
    FOCAL_ALPHA, FOCAL_GAMMA,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::nn::{Linear, MultiHeadAttention};
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};

/// What is injected into the label embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptTokenType {
    /// Labels are used as they are.
    None,
    /// One learned vector shared by all videos.
    Learnable,
    /// The pooled video representation `h_v`.
    Video,
    /// Denoised foreground knowledge.
    #[default]
    Foreground,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InjectMode {
    /// `[F_t ; h]` per label row (`C × 2D`), then a `2D → D` projection.
    #[default]
    FeatureConcat,
    /// `h` appended as an extra token, mixed by one self-attention layer,
    /// then dropped.
    TokenConcat,
}

#[derive(Clone, Debug)]
pub struct PromptInjector {
    pub mode: InjectMode,
    pub proj: Linear,
    /// Optional GELU branch over the same concatenation, added to `proj`.
    pub branch: Option<(Linear, Linear)>,
    pub mixer: MultiHeadAttention,
}

impl PromptInjector {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        branch_hidden: usize,
        mode: InjectMode,
        rng: &mut R,
    ) -> Result<Self> {
        let proj = Linear::new(store, "fpa.proj", 2 * dim, dim, true, rng);
        let branch = (branch_hidden > 0).then(|| {
            (
                Linear::new(store, "fpa.branch.up", 2 * dim, branch_hidden, true, rng),
                Linear::new(store, "fpa.branch.down", branch_hidden, dim, true, rng),
            )
        });
        let mixer = MultiHeadAttention::new(store, "fpa.mixer", dim, heads, rng)?;
        let inj = Self {
            mode,
            proj,
            branch,
            mixer,
        };
        inj.identity_init(store);
        Ok(inj)
    }

    /// Sets `proj` to the `[I ; 0]` block and zeroes the branch output, which
    /// passes label rows through and ignores the prompt.
    pub fn identity_init(&self, store: &mut ParamStore) {
        if let Some((_, down)) = &self.branch {
            down.zero_init(store);
        }
        let d = self.proj.out_dim;
        let mut w = DenseArray::zeros(&[2 * d, d]);
        for i in 0..d {
            w.set(i, i, 1.0);
        }
        store.get_mut(self.proj.weight).value = w;
        if let Some(b) = self.proj.bias {
            store.get_mut(b).value = DenseArray::zeros(&[1, d]);
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.proj.params();
        if let Some((up, down)) = &self.branch {
            p.extend(up.params());
            p.extend(down.params());
        }
        for lin in [&self.mixer.q, &self.mixer.k, &self.mixer.v, &self.mixer.out] {
            p.extend(lin.params());
        }
        p
    }

    /// `F_t′` (`C × D`) from labels `C × D` and prompt `1 × D`.
    pub fn inject(&self, tape: &mut Tape, store: &ParamStore, f_t: Var, h: Var) -> Result<Var> {
        let (c, d) = {
            let v = tape.value(f_t);
            (v.rows(), v.cols())
        };
        if tape.value(h).shape() != [1, d] {
            return Err(shape_err!("prompt must be 1 × {d}, got {:?}", tape.value(h).shape()));
        }
        match self.mode {
            InjectMode::FeatureConcat => {
                let rep = tape.repeat_rows(h, c)?;
                let cat = tape.concat_cols(&[f_t, rep])?;
                let lin = self.proj.forward(tape, store, cat)?;
                match &self.branch {
                    Some((up, down)) => {
                        let u = up.forward(tape, store, cat)?;
                        let g = tape.gelu(u);
                        let b = down.forward(tape, store, g)?;
                        tape.add(lin, b)
                    }
                    None => Ok(lin),
                }
            }
            InjectMode::TokenConcat => {
                let seq = tape.concat_rows(&[f_t, h])?;
                let a = self.mixer.forward(tape, store, seq, seq)?;
                let mixed = tape.add(seq, a.output)?;
                tape.slice_rows(mixed, 0, c)
            }
        }
    }
}

/// Plain-array convenience for [`PromptInjector::inject`].
pub fn inject_prompt(
    inj: &PromptInjector,
    store: &ParamStore,
    f_t_specific: &DenseArray,
    h_f_pred: &DenseArray,
) -> Result<DenseArray> {
    let mut tape = Tape::new();
    let f = tape.constant(f_t_specific.as_matrix());
    let h = tape.constant(h_f_pred.as_matrix());
    let out = inj.inject(&mut tape, store, f, h)?;
    Ok(tape.value(out).clone())
}

pub struct CrossAttention {
    /// `F_v + attention output`.
    pub f_v_prime: Var,
    /// Attention output before the residual.
    pub attended: Var,
    pub weights: Vec<Var>,
}

/// Video rows query the prompted label rows.
pub fn cross_attend(
    tape: &mut Tape,
    store: &ParamStore,
    attn: &MultiHeadAttention,
    f_v: Var,
    f_t_prime: Var,
) -> Result<CrossAttention> {
    let out = attn.forward(tape, store, f_v, f_t_prime)?;
    let f_v_prime = tape.add(f_v, out.output)?;
    Ok(CrossAttention {
        f_v_prime,
        attended: out.output,
        weights: out.weights,
    })
}

/// Segment-by-label similarity logits `F_v′ F_t′ᵀ`.
pub fn classify(tape: &mut Tape, f_v_prime: Var, f_t_prime: Var) -> Result<Var> {
    tape.matmul_t(f_v_prime, f_t_prime)
}
