//! Semantic-unify conditioning: fuse an action-shared text embedding with
//! the per-label embeddings into one condition vector for the denoiser.

mod fsa;
mod llm;

pub use fsa::{aggregate_condition, Fsa, Readout};
pub use llm::{
    encode_shared, llm_summarize, render_prompt, SharedSemanticsSource, SourceMode, ACTIONS_PLACEHOLDER,
    DEFAULT_TEMPLATE, EMBEDDED_FIXTURE,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TextBank {
    /// `C × D`, one row per label.
    pub specific: DenseArray,
    /// `1 × D`.
    pub shared: DenseArray,
    pub category_names: Vec<String>,
}

impl TextBank {
    pub fn new(specific: DenseArray, shared: DenseArray, category_names: Vec<String>) -> Result<Self> {
        let specific = specific.as_matrix();
        let shared = shared.as_matrix();
        if specific.rows() < 1 {
            return Err(shape_err!("text bank needs at least one label"));
        }
        if specific.rows() != category_names.len() {
            return Err(shape_err!(
                "{} label rows for {} names",
                specific.rows(),
                category_names.len()
            ));
        }
        if shared.rows() != 1 || shared.cols() != specific.cols() {
            return Err(shape_err!(
                "shared embedding {:?} does not match label dim {}",
                shared.shape(),
                specific.cols()
            ));
        }
        Ok(Self {
            specific,
            shared,
            category_names,
        })
    }
}

/// Shared token first, then the label tokens in order.
pub fn compose_text_sequence(bank: &TextBank) -> Result<DenseArray> {
    if bank.shared.len() != bank.specific.cols() {
        return Err(shape_err!(
            "shared dim {} vs label dim {}",
            bank.shared.len(),
            bank.specific.cols()
        ));
    }
    let shared = bank.shared.as_matrix();
    DenseArray::vstack(&[&shared, &bank.specific])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditionType {
    None,
    /// One denoising chain per label, conditioned on that label alone.
    PerAction,
    SharedOnly,
    SpecificOnly,
    #[default]
    Suc,
}

impl ConditionType {
    pub const ALL: [ConditionType; 5] = [
        ConditionType::None,
        ConditionType::PerAction,
        ConditionType::SharedOnly,
        ConditionType::SpecificOnly,
        ConditionType::Suc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionType::None => "none",
            ConditionType::PerAction => "per_action",
            ConditionType::SharedOnly => "shared_only",
            ConditionType::SpecificOnly => "specific_only",
            ConditionType::Suc => "suc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnifyStrategy {
    #[default]
    Fsa,
    /// FSA with mean-pooled readout.
    Mean,
    Addition,
    Concatenation,
}

/// Text-side learnable parts: the projection of raw text embeddings into
/// model space and the condition builders.
#[derive(Clone, Debug)]
pub struct Conditioner {
    pub text_proj: Linear,
    pub fsa: Fsa,
    pub concat_proj: Linear,
    pub kind: ConditionType,
    pub unify: UnifyStrategy,
}

/// Text bank already projected onto the tape.
#[derive(Clone, Copy, Debug)]
pub struct TextVars {
    pub specific: Var,
    pub shared: Var,
}

impl Conditioner {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        text_dim: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        hidden: usize,
        kind: ConditionType,
        unify: UnifyStrategy,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            text_proj: Linear::new(store, "text_proj", text_dim, dim, true, rng),
            fsa: Fsa::new(store, "fsa", dim, layers, heads, hidden, rng)?,
            concat_proj: Linear::new(store, "suc.concat_proj", 2 * dim, dim, true, rng),
            kind,
            unify,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.text_proj.params();
        p.extend(self.fsa.params());
        p.extend(self.concat_proj.params());
        p
    }

    /// Projects raw label and shared embeddings into model space.
    pub fn project(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        specific: &DenseArray,
        shared: &DenseArray,
    ) -> Result<TextVars> {
        let s = tape.constant(specific.as_matrix());
        let specific = self.text_proj.forward(tape, store, s)?;
        let h = tape.constant(shared.as_matrix());
        let shared = self.text_proj.forward(tape, store, h)?;
        Ok(TextVars { specific, shared })
    }

    /// `1 × D` condition, or `None` when conditioning is off. `class` picks
    /// the label row in per-action mode.
    pub fn condition(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        text: TextVars,
        class: Option<usize>,
    ) -> Result<Option<Var>> {
        let c = match self.kind {
            ConditionType::None => return Ok(None),
            ConditionType::PerAction => {
                let k = class.ok_or_else(|| {
                    Error::Precondition("per-action conditioning needs a label index".into())
                })?;
                let rows = tape.value(text.specific).rows();
                if k >= rows {
                    return Err(Error::Index {
                        index: k,
                        lo: 0,
                        hi: rows.saturating_sub(1),
                    });
                }
                tape.slice_rows(text.specific, k, 1)?
            }
            ConditionType::SharedOnly => text.shared,
            ConditionType::SpecificOnly => self.fsa.aggregate(tape, store, text.specific, Readout::Mean)?,
            ConditionType::Suc => match self.unify {
                UnifyStrategy::Fsa | UnifyStrategy::Mean => {
                    let seq = tape.concat_rows(&[text.shared, text.specific])?;
                    let readout = if self.unify == UnifyStrategy::Fsa {
                        Readout::Shared
                    } else {
                        Readout::Mean
                    };
                    self.fsa.aggregate(tape, store, seq, readout)?
                }
                UnifyStrategy::Addition => {
                    let m = tape.mean_rows(text.specific)?;
                    tape.add(text.shared, m)?
                }
                UnifyStrategy::Concatenation => {
                    let m = tape.mean_rows(text.specific)?;
                    let cat = tape.concat_cols(&[text.shared, m])?;
                    self.concat_proj.forward(tape, store, cat)?
                }
            },
        };
        Ok(Some(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(c: usize, d: usize, rng: &mut ChaCha8Rng) -> TextBank {
        TextBank::new(
            DenseArray::randn(&[c, d], 1.0, rng),
            DenseArray::randn(&[1, d], 1.0, rng),
            (0..c).map(|i| format!("c{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sequence_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = bank(1, 4, &mut rng);
        let s = compose_text_sequence(&b).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        assert_eq!(s.row(0), b.shared.data());
        let b = bank(20, 8, &mut rng);
        let s = compose_text_sequence(&b).unwrap();
        assert_eq!(s.shape(), &[21, 8]);
        for i in 0..20 {
            assert_eq!(s.row(i + 1), b.specific.row(i));
        }
        assert!(TextBank::new(DenseArray::zeros(&[2, 3]), DenseArray::zeros(&[1, 4]), vec!["a".into(), "b".into()]).is_err());
        assert!(TextBank::new(DenseArray::zeros(&[2, 3]), DenseArray::zeros(&[1, 3]), vec!["a".into()]).is_err());
    }

    #[test]
    fn identity_fsa_returns_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let fsa = Fsa::new(&mut store, "fsa", 8, 2, 2, 16, &mut rng).unwrap();
        fsa.identity_init(&mut store);
        let b = bank(5, 8, &mut rng);
        let c = aggregate_condition(&fsa, &store, &compose_text_sequence(&b).unwrap()).unwrap();
        assert_eq!(c.data(), b.shared.data());
    }

    #[test]
    fn output_dim_for_any_label_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let fsa = Fsa::new(&mut store, "fsa", 8, 2, 2, 16, &mut rng).unwrap();
        for c in [1, 2, 7, 20] {
            let b = bank(c, 8, &mut rng);
            let out = aggregate_condition(&fsa, &store, &compose_text_sequence(&b).unwrap()).unwrap();
            assert_eq!(out.shape(), &[1, 8]);
        }
        assert!(aggregate_condition(&fsa, &store, &DenseArray::zeros(&[1, 8])).is_err());
    }

    #[test]
    fn label_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let fsa = Fsa::new(&mut store, "fsa", 8, 2, 2, 16, &mut rng).unwrap();
        let b = bank(6, 8, &mut rng);
        let base = aggregate_condition(&fsa, &store, &compose_text_sequence(&b).unwrap()).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng);
        let permuted = TextBank::new(
            b.specific.select_rows(&order),
            b.shared.clone(),
            b.category_names.clone(),
        )
        .unwrap();
        let other = aggregate_condition(&fsa, &store, &compose_text_sequence(&permuted).unwrap()).unwrap();
        assert!(base.max_abs_diff(&other) < 1e-12);
    }

    #[test]
    fn condition_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mut cond = Conditioner::new(&mut store, 6, 8, 2, 2, 16, ConditionType::None, UnifyStrategy::Fsa, &mut rng).unwrap();
        let specific = DenseArray::randn(&[4, 6], 1.0, &mut rng);
        let shared = DenseArray::randn(&[1, 6], 1.0, &mut rng);
        for kind in ConditionType::ALL {
            for unify in [UnifyStrategy::Fsa, UnifyStrategy::Mean, UnifyStrategy::Addition, UnifyStrategy::Concatenation] {
                cond.kind = kind;
                cond.unify = unify;
                let mut t = Tape::new();
                let tv = cond.project(&mut t, &store, &specific, &shared).unwrap();
                let c = cond.condition(&mut t, &store, tv, Some(2)).unwrap();
                match kind {
                    ConditionType::None => assert!(c.is_none()),
                    _ => assert_eq!(t.value(c.unwrap()).shape(), &[1, 8]),
                }
            }
        }
        cond.kind = ConditionType::PerAction;
        let mut t = Tape::new();
        let tv = cond.project(&mut t, &store, &specific, &shared).unwrap();
        assert!(cond.condition(&mut t, &store, tv, None).is_err());
        assert!(cond.condition(&mut t, &store, tv, Some(4)).is_err());
        let c = cond.condition(&mut t, &store, tv, Some(1)).unwrap().unwrap();
        assert_eq!(t.value(c).data(), t.value(tv.specific).row(1));
    }

    #[test]
    fn aggregate_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut store = ParamStore::new();
            let fsa = Fsa::new(&mut store, "fsa", 4, 2, 2, 8, &mut rng).unwrap();
            let seq_id = store.add("seq", DenseArray::randn(&[4, 4], 1.0, &mut rng));
            let target = DenseArray::randn(&[1, 4], 1.0, &mut rng);
            let mut ids = fsa.params();
            ids.push(seq_id);
            let report = finite_diff_check(&mut store, &ids, 1e-6, |t, s| {
                let seq = t.param(s, seq_id);
                let c = fsa.aggregate(t, s, seq, Readout::Shared)?;
                let tgt = t.constant(target.clone());
                let d = t.sub(c, tgt)?;
                let sq = t.square(d);
                Ok(t.sum(sq))
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
        }
    }
}
