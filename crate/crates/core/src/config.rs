//! JSON run configuration. Every section rejects unknown keys and fills
//! missing ones from its defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsd::DiffusionConfig;
use crate::data::SyntheticConfig;
use crate::detect::DetectConfig;
use crate::error::{Error, Result};
use crate::fpa::{FgLossKind, InjectMode, LossWeights, PromptTokenType};
use crate::suc::{ConditionType, SharedSemanticsSource, SourceMode, UnifyStrategy, DEFAULT_TEMPLATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SucConfig {
    pub condition_type: ConditionType,
    pub unify_strategy: UnifyStrategy,
    pub source: SourceMode,
    pub fixture_path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub template: String,
    pub fsa_layers: usize,
    /// Scale of the summary-seeded perturbation in the shared embedding.
    pub shared_perturb: f64,
}

impl Default for SucConfig {
    fn default() -> Self {
        Self {
            condition_type: ConditionType::Suc,
            unify_strategy: UnifyStrategy::Fsa,
            source: SourceMode::Fixture,
            fixture_path: None,
            endpoint: None,
            timeout_ms: 10_000,
            template: DEFAULT_TEMPLATE.to_string(),
            fsa_layers: 2,
            shared_perturb: 0.1,
        }
    }
}

impl SucConfig {
    pub fn source(&self) -> SharedSemanticsSource {
        SharedSemanticsSource {
            mode: self.source.clone(),
            fixture_path: self.fixture_path.clone(),
            endpoint: self.endpoint.clone(),
            timeout_ms: self.timeout_ms,
            template: self.template.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    #[serde(alias = "D")]
    pub dim: usize,
    /// Masked convolution layers in the temporal backbone.
    pub backbone_layers: usize,
    /// Denoiser blocks.
    pub blocks: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            backbone_layers: 3,
            blocks: 2,
            heads: 2,
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpaConfig {
    pub prompt_token_type: PromptTokenType,
    pub inject_mode: InjectMode,
    /// Hidden width of the GELU branch of `Proj` (0 = linear only).
    pub proj_hidden: usize,
    pub weights: LossWeights,
    pub fg_loss: FgLossKind,
    /// Use the current `h_f` target instead of the sampled chain in training.
    pub teacher_forcing: bool,
    /// Replace the detached chain by a differentiable one-step prediction
    /// from `t = T`.
    pub backprop_one_step: bool,
}

impl Default for FpaConfig {
    fn default() -> Self {
        Self {
            prompt_token_type: PromptTokenType::Foreground,
            inject_mode: InjectMode::FeatureConcat,
            proj_hidden: 64,
            weights: LossWeights::default(),
            fg_loss: FgLossKind::default(),
            teacher_forcing: false,
            backprop_one_step: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub seeds: Vec<u64>,
    /// Draw a random subset of the seen labels as the label set of each
    /// batch instead of always using all of them.
    pub episodic_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 2,
            lr: 2e-3,
            warmup_epochs: 5,
            seeds: vec![0, 1, 2],
            episodic_labels: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    pub suc: SucConfig,
    pub diffusion: DiffusionConfig,
    pub model: ModelConfig,
    pub fpa: FpaConfig,
    pub detect: DetectConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.data.validate()?;
        self.diffusion.schedule()?;
        let m = &self.model;
        if m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0 {
            return bad(format!("model.dim {} must be a positive multiple of model.heads {}", m.dim, m.heads));
        }
        if m.hidden == 0 || m.backbone_layers == 0 {
            return bad("model.hidden and model.backbone_layers must be ≥ 1".into());
        }
        if self.suc.fsa_layers == 0 {
            return bad("suc.fsa_layers must be ≥ 1".into());
        }
        if !(self.suc.shared_perturb >= 0.0 && self.suc.shared_perturb.is_finite()) {
            return bad("suc.shared_perturb must be finite and ≥ 0".into());
        }
        let d = &self.detect;
        if !(d.sigma_nms > 0.0) {
            return bad(format!("detect.sigma_nms must be > 0, got {}", d.sigma_nms));
        }
        if d.tiou_grid.is_empty() || d.tiou_grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("detect.tiou_grid must be a nonempty list of values in (0, 1]".into());
        }
        let w = &self.fpa.weights;
        if [w.df, w.cls, w.fg, w.loc].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("fpa.weights must be finite and ≥ 0".into());
        }
        let t = &self.train;
        if t.batch == 0 {
            return bad("train.batch must be ≥ 1".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be > 0, got {}", t.lr));
        }
        if t.seeds.is_empty() {
            return bad("train.seeds must list at least one seed".into());
        }
        Ok(())
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&v).expect("value serialises")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether the denoiser takes part in training and inference.
    pub fn uses_bsd(&self) -> bool {
        self.fpa.prompt_token_type == PromptTokenType::Foreground
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.diffusion.steps, 8);
        assert_eq!(cfg.detect.tiou_grid, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"bogus": 1}"#,
            r#"{"model": {"dims": 4}}"#,
            r#"{"fpa": {"weights": {"dff": 1}}}"#,
            r#"{"data": {"num_classes": 4}}"#,
        ] {
            let err = RunConfig::from_json(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn nested_values_parse() {
        let cfg = RunConfig::from_json(
            r#"{"model": {"D": 16, "heads": 4}, "suc": {"condition_type": "shared_only"},
                "fpa": {"fg_loss": {"kind": "bce"}, "prompt_token_type": "video"},
                "diffusion": {"steps": 2, "shape": "geometric"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.suc.condition_type, ConditionType::SharedOnly);
        assert_eq!(cfg.fpa.fg_loss, FgLossKind::Bce);
        assert!(!cfg.uses_bsd());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"model": {"dim": 30, "heads": 4}}"#,
            r#"{"diffusion": {"steps": 0}}"#,
            r#"{"train": {"seeds": []}}"#,
            r#"{"detect": {"sigma_nms": 0}}"#,
        ] {
            assert!(RunConfig::from_json(text).unwrap_err().is_config(), "{text}");
        }
    }

    #[test]
    fn hash_is_canonical() {
        let a = RunConfig::from_json(r#"{"train": {"epochs": 3, "batch": 4}}"#).unwrap();
        let b = RunConfig::from_json(r#"{"train": {"batch": 4, "epochs": 3}}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), RunConfig::default().hash());
        let back = RunConfig::from_json(&a.canonical_json()).unwrap();
        assert_eq!(back, a);
    }
}
