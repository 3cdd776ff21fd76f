use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backbone::TemporalBackbone;
use crate::bsd::{reverse_trajectory, DenoiserNet, NetDenoiser};
use crate::config::RunConfig;
use crate::data::CategorySplit;
use crate::error::{Error, Result};
use crate::fpa::{classify, cross_attend, PromptInjector, PromptTokenType};
use crate::numerics::nn::{Linear, MultiHeadAttention};
use crate::numerics::{DenseArray, ParamId, ParamStore, Tape, Var};
use crate::schedule::DiffusionSchedule;
use crate::suc::{encode_shared, llm_summarize, ConditionType, Conditioner, TextVars};

/// Candidate categories with their raw text embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub ids: Vec<usize>,
    pub names: Vec<String>,
    /// `C × D_in`.
    pub specific: DenseArray,
    /// `1 × D_in`.
    pub shared: DenseArray,
    pub summary: String,
    perturb: f64,
}

impl LabelSet {
    pub fn new(split: &CategorySplit, ids: &[usize], cfg: &RunConfig) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Precondition("label set is empty".into()));
        }
        let names = split.names_of(ids);
        let summary = llm_summarize(&cfg.suc.source(), &names)?;
        Self::with_summary(split, ids, summary, cfg.suc.shared_perturb)
    }

    fn with_summary(split: &CategorySplit, ids: &[usize], summary: String, perturb: f64) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&c| c >= split.num_categories()) {
            return Err(Error::Index {
                index: bad,
                lo: 0,
                hi: split.num_categories() - 1,
            });
        }
        let specific = split.prototypes.select_rows(ids);
        let shared = encode_shared(&summary, &specific, perturb)?;
        Ok(Self {
            ids: ids.to_vec(),
            names: split.names_of(ids),
            specific,
            shared,
            summary,
            perturb,
        })
    }

    /// A smaller label set reusing this set's summary text.
    pub fn subset(&self, split: &CategorySplit, ids: &[usize]) -> Result<Self> {
        Self::with_summary(split, ids, self.summary.clone(), self.perturb)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, category: usize) -> Option<usize> {
        self.ids.iter().position(|&c| c == category)
    }

    pub fn onehot(&self, categories: &[Option<usize>]) -> Result<DenseArray> {
        let mut m = DenseArray::zeros(&[categories.len(), self.len()]);
        for (i, c) in categories.iter().enumerate() {
            if let Some(c) = c {
                let j = self
                    .index_of(*c)
                    .ok_or_else(|| Error::Precondition(format!("category {c} is not in the label set")))?;
                m.set(i, j, 1.0);
            }
        }
        Ok(m)
    }
}

/// Tape handles for one video's detection pass.
pub struct VideoOutput {
    pub f_v: Var,
    pub f_v_prime: Var,
    pub f_t_prime: Var,
    /// `N × C` similarity logits.
    pub logits: Var,
    /// `N × 1` foreground logits.
    pub fg: Var,
    /// `N × 2` positive boundary distances.
    pub dist: Var,
}

/// Plain-array outputs of inference on one video.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub f_v: DenseArray,
    pub logits: DenseArray,
    pub fg: DenseArray,
    pub dist: DenseArray,
    /// Reverse-chain states `h_T … h_0` when the denoiser ran.
    pub trajectory: Option<Vec<DenseArray>>,
}

/// Per-segment `D → D → out` GELU MLP.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

impl Head {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, out: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, out, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let g = tape.gelu(h);
        self.out.forward(tape, store, g)
    }
}

#[derive(Clone, Debug)]
pub struct DfAlign {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub backbone: TemporalBackbone,
    pub conditioner: Conditioner,
    pub denoiser: DenoiserNet,
    pub injector: PromptInjector,
    pub prompt_token: ParamId,
    pub cross: MultiHeadAttention,
    pub fg_head: Head,
    pub reg_head: Head,
    pub schedule: DiffusionSchedule,
}

impl DfAlign {
    /// Every component is built regardless of the ablation switches so the
    /// parameter layout depends on dimensions only.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &cfg.model;
        let d_in = cfg.data.feature_dim;
        let mut store = ParamStore::new();
        let backbone = TemporalBackbone::new(&mut store, d_in, m.dim, m.backbone_layers, &mut rng);
        let conditioner = Conditioner::new(
            &mut store,
            d_in,
            m.dim,
            cfg.suc.fsa_layers,
            m.heads,
            m.hidden,
            cfg.suc.condition_type,
            cfg.suc.unify_strategy,
            &mut rng,
        )?;
        let denoiser = DenoiserNet::new(&mut store, "bsd.denoiser", m.dim, m.blocks, m.heads, m.hidden, &mut rng)?;
        let injector = PromptInjector::new(&mut store, m.dim, m.heads, cfg.fpa.proj_hidden, cfg.fpa.inject_mode, &mut rng)?;
        let prompt_token = store.add("fpa.prompt_token", DenseArray::randn(&[1, m.dim], 0.1, &mut rng));
        let cross = MultiHeadAttention::new(&mut store, "fpa.cross", m.dim, m.heads, &mut rng)?;
        let fg_head = Head::new(&mut store, "head.fg", m.dim, 1, &mut rng);
        let reg_head = Head::new(&mut store, "head.reg", m.dim, 2, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            backbone,
            conditioner,
            denoiser,
            injector,
            prompt_token,
            cross,
            fg_head,
            reg_head,
            schedule: cfg.diffusion.schedule()?,
        })
    }

    pub fn project_text(&self, tape: &mut Tape, labels: &LabelSet) -> Result<TextVars> {
        self.conditioner.project(tape, &self.store, &labels.specific, &labels.shared)
    }

    /// Condition values for inference: one entry, or one per label in
    /// per-action mode.
    pub fn conditions(&self, labels: &LabelSet) -> Result<Vec<Option<DenseArray>>> {
        let mut tape = Tape::new();
        let text = self.project_text(&mut tape, labels)?;
        let classes: Vec<Option<usize>> = if self.conditioner.kind == ConditionType::PerAction {
            (0..labels.len()).map(Some).collect()
        } else {
            vec![None]
        };
        classes
            .into_iter()
            .map(|k| {
                let c = self.conditioner.condition(&mut tape, &self.store, text, k)?;
                Ok(c.map(|c| tape.value(c).clone()))
            })
            .collect()
    }

    /// Reverse chains from `h_v` under each condition, averaged state-wise.
    pub fn denoise_chain<R: Rng + ?Sized>(
        &self,
        h_v: &DenseArray,
        conds: &[Option<DenseArray>],
        rng: &mut R,
    ) -> Result<Vec<DenseArray>> {
        if conds.is_empty() {
            return Err(Error::Precondition("no conditions to denoise under".into()));
        }
        let den = NetDenoiser {
            net: &self.denoiser,
            store: &self.store,
        };
        let mut acc: Option<Vec<DenseArray>> = None;
        for c in conds {
            let traj = reverse_trajectory(&den, h_v, c.as_ref(), &self.schedule, rng)?;
            acc = Some(match acc {
                None => traj,
                Some(mut a) => {
                    for (x, y) in a.iter_mut().zip(&traj) {
                        x.add_assign_scaled(y, 1.0);
                    }
                    a
                }
            });
        }
        let k = 1.0 / conds.len() as f64;
        Ok(acc.expect("nonempty").into_iter().map(|s| s.scale(k)).collect())
    }

    /// Prompt injection, cross-attention and heads on top of `f_v`.
    pub fn heads(&self, tape: &mut Tape, f_v: Var, f_t: Var, prompt: Option<Var>) -> Result<VideoOutput> {
        let f_t_prime = match prompt {
            Some(h) => self.injector.inject(tape, &self.store, f_t, h)?,
            None => f_t,
        };
        let ca = cross_attend(tape, &self.store, &self.cross, f_v, f_t_prime)?;
        let logits = classify(tape, ca.f_v_prime, f_t_prime)?;
        let fg = self.fg_head.forward(tape, &self.store, ca.f_v_prime)?;
        let raw = self.reg_head.forward(tape, &self.store, ca.f_v_prime)?;
        let dist = tape.softplus(raw);
        Ok(VideoOutput {
            f_v,
            f_v_prime: ca.f_v_prime,
            f_t_prime,
            logits,
            fg,
            dist,
        })
    }

    /// Full inference on one video. `conds` comes from [`DfAlign::conditions`].
    pub fn predict<R: Rng + ?Sized>(
        &self,
        x: &DenseArray,
        labels: &LabelSet,
        conds: &[Option<DenseArray>],
        rng: &mut R,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let text = self.project_text(&mut tape, labels)?;
        let xv = tape.constant(x.as_matrix());
        let n = tape.value(xv).rows();
        let f_v = self.backbone.forward(&mut tape, &self.store, xv, n)?;
        let mut trajectory = None;
        let prompt = match self.cfg.fpa.prompt_token_type {
            PromptTokenType::None => None,
            PromptTokenType::Learnable => Some(tape.param(&self.store, self.prompt_token)),
            PromptTokenType::Video => Some(tape.mean_rows(f_v)?),
            PromptTokenType::Foreground => {
                let h_v = tape.value(f_v).mean_rows()?;
                let states = self.denoise_chain(&h_v, conds, rng)?;
                let h = tape.constant(states.last().expect("nonempty").clone());
                trajectory = Some(states);
                Some(h)
            }
        };
        let out = self.heads(&mut tape, f_v, text.specific, prompt)?;
        Ok(Prediction {
            f_v: tape.value(out.f_v).clone(),
            logits: tape.value(out.logits).clone(),
            fg: tape.value(out.fg).clone(),
            dist: tape.value(out.dist).clone(),
            trajectory,
        })
    }
}
