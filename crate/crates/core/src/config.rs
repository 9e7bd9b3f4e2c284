//! Model and training configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::finegrained::TclWeights;
use crate::segmentation::PositionAnchor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width `d`; the encoder maps straight to it (`D = d`).
    pub width: usize,
    pub heads: usize,
    /// FFN width as a multiple of `d`.
    pub ffn_mult: usize,
    pub seg_layers: usize,
    pub gen_layers: usize,
    pub n_queries: usize,
    /// Temporal stride `τ`.
    pub stride: usize,
    /// Fine-label pooling window in sampled frames; defaults to the stride.
    pub pool_window: Option<usize>,
    /// Rows of the positional table.
    pub max_len: usize,
    /// `LN(FFN(LN(MHSA(H + P))) + H) + H`; `false` selects a pre-norm layer.
    pub literal_layer: bool,
    pub position_anchor: PositionAnchor,
    /// Use `Ŷ · table` instead of embedding the argmax label.
    pub soft_labels: bool,
    pub tcl: TclWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 32,
            heads: 4,
            ffn_mult: 4,
            seg_layers: 2,
            gen_layers: 2,
            n_queries: 8,
            stride: 3,
            pool_window: None,
            max_len: 1024,
            literal_layer: true,
            position_anchor: PositionAnchor::End,
            soft_labels: false,
            tcl: TclWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn pool(&self) -> usize {
        self.pool_window.unwrap_or(self.stride)
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return bad("model.width must be a positive multiple of model.heads");
        }
        if self.ffn_mult == 0 {
            return bad("model.ffn_mult must be at least 1");
        }
        if self.seg_layers == 0 || self.gen_layers == 0 {
            return bad("model.seg_layers and model.gen_layers must be at least 1");
        }
        if self.n_queries == 0 {
            return bad("model.n_queries must be at least 1");
        }
        if self.stride == 0 {
            return bad("model.stride must be at least 1");
        }
        if self.pool_window == Some(0) {
            return bad("model.pool_window must be at least 1");
        }
        if self.max_len == 0 {
            return bad("model.max_len must be at least 1");
        }
        if !(self.tcl.lambda_intra.is_finite() && self.tcl.lambda_inter.is_finite())
            || self.tcl.lambda_intra < 0.0
            || self.tcl.lambda_inter < 0.0
        {
            return bad("model.tcl weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Which ablation branch is active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Video features, fine-label embeddings and segmentation labels.
    #[default]
    Multilevel,
    /// Same model as `Multilevel`, reported under the modality comparison.
    Multimodal,
    /// Segmentation labels kept, fine-label branch replaced by zeros.
    NoMultilevel,
    /// Video features only: no fine-label branch, no label cross-attention.
    Unimodal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Unimodal,
        Variant::Multimodal,
        Variant::NoMultilevel,
        Variant::Multilevel,
    ];

    pub fn uses_fine(self) -> bool {
        matches!(self, Variant::Multilevel | Variant::Multimodal)
    }

    pub fn uses_labels(self) -> bool {
        !matches!(self, Variant::Unimodal)
    }

    /// Variants that train the identical model share this key.
    pub fn canonical(self) -> Variant {
        match self {
            Variant::Multimodal => Variant::Multilevel,
            v => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Multilevel => "multilevel",
            Variant::Multimodal => "multimodal",
            Variant::NoMultilevel => "no_multilevel",
            Variant::Unimodal => "unimodal",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// `generator` trains only the label generator; `main` runs the two-stage
/// pipeline (generator, then the frozen-generator main model); `joint` trains
/// everything at once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generator,
    #[default]
    Main,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_peak: f64,
    pub batch_size: usize,
    /// Passes over the training videos per epoch; each pass draws fresh
    /// windows.
    pub passes_per_epoch: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub alpha_train: Vec<f64>,
    /// Draw each batch's observation rate uniformly between the smallest
    /// and largest entry of `alpha_train` instead of from the set itself.
    pub alpha_continuous: bool,
    pub beta_train: f64,
    /// Seeds trained by `hiant train` when no `--seed` is given.
    pub seeds: Vec<u64>,
    pub stage: Stage,
    pub variant: Variant,
    pub held_out_fraction: f64,
    /// Seed of the train/held-out split, shared by all training seeds.
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr_peak: 1e-3,
            batch_size: 16,
            passes_per_epoch: 4,
            warmup_epochs: 10,
            weight_decay: 1.0,
            alpha_train: vec![0.2, 0.3, 0.5],
            alpha_continuous: true,
            beta_train: 0.5,
            seeds: vec![1, 10, 13452],
            stage: Stage::Main,
            variant: Variant::Multilevel,
            held_out_fraction: 0.2,
            split_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("train.warmup_epochs must be smaller than train.epochs");
        }
        if !(self.lr_peak.is_finite() && self.lr_peak > 0.0) {
            return bad("train.lr_peak must be positive");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if self.passes_per_epoch == 0 {
            return bad("train.passes_per_epoch must be at least 1");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("train.weight_decay must be non-negative");
        }
        if self.alpha_train.is_empty() || self.alpha_train.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("train.alpha_train must be a non-empty list of rates in (0, 1)");
        }
        if !(self.beta_train > 0.0 && self.beta_train < 1.0) {
            return bad("train.beta_train must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return bad("train.held_out_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let cfg = Config::from_toml(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Evaluation grid: observation rates, prediction rates and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            alphas: vec![0.1, 0.2, 0.3],
            betas: vec![0.1, 0.2, 0.3, 0.5],
            seeds: vec![1, 10, 13452],
        }
    }
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        let rate = |v: &f64| *v > 0.0 && *v < 1.0;
        if self.alphas.is_empty() || self.betas.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("protocol lists must be non-empty".into()));
        }
        if !self.alphas.iter().all(rate) || !self.betas.iter().all(rate) {
            return Err(Error::InvalidConfig("protocol rates must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let spec: ProtocolSpec = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}
