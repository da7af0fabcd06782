//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. [`RunConfig::to_text`] writes every key in a fixed order, and
//! the config hash is the FNV-1a hash of that text.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::chg::GraphVariant;
use crate::encoder::ModelConfig;
use crate::labels::fnv1a64;
use crate::objectives::LossWeights;
use crate::optim::AdamConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The loss ablations: full objective or one family of terms removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    #[default]
    Full,
    NoAb,
    NoFrag,
    NoTopo,
    NoScaf,
    /// Without the graph-level terms `L_topo` and `L_scaf`.
    NoGraphLevel,
    /// Without the atom-bond and fragment-level terms `L_ab` and `L_frag`.
    NoLocal,
}

impl LossVariant {
    pub const ALL: [LossVariant; 7] = [
        LossVariant::Full,
        LossVariant::NoAb,
        LossVariant::NoFrag,
        LossVariant::NoTopo,
        LossVariant::NoScaf,
        LossVariant::NoGraphLevel,
        LossVariant::NoLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::NoAb => "no_ab",
            LossVariant::NoFrag => "no_frag",
            LossVariant::NoTopo => "no_topo",
            LossVariant::NoScaf => "no_scaf",
            LossVariant::NoGraphLevel => "no_graph_level",
            LossVariant::NoLocal => "no_local",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        LossVariant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Zeroes the weights of the removed terms.
    pub fn apply(self, w: &LossWeights) -> LossWeights {
        let mut w = *w;
        match self {
            LossVariant::Full => {}
            LossVariant::NoAb => w.ab = 0.0,
            LossVariant::NoFrag => w.frag = 0.0,
            LossVariant::NoTopo => w.topo = 0.0,
            LossVariant::NoScaf => w.scaf = 0.0,
            LossVariant::NoGraphLevel => {
                w.topo = 0.0;
                w.scaf = 0.0;
            }
            LossVariant::NoLocal => {
                w.ab = 0.0;
                w.frag = 0.0;
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: GraphVariant,
    pub loss_variant: LossVariant,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub vocab_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub finetune_epochs: usize,
    pub finetune_batch: usize,
    /// Worker threads for preprocessing; 0 means the rayon default.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            variant: GraphVariant::Compositional,
            loss_variant: LossVariant::Full,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            vocab_size: 800,
            pretrain_epochs: 100,
            pretrain_batch: 256,
            finetune_epochs: 100,
            finetune_batch: 32,
            threads: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl RunConfig {
    /// Weights after the loss ablation is applied.
    pub fn effective_weights(&self) -> LossWeights {
        self.loss_variant.apply(&self.weights)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "variant" => {
                self.variant = GraphVariant::from_name(v).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "loss_variant" => {
                self.loss_variant = LossVariant::from_name(v).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "layers" => self.model.layers = parse(key, v)?,
            "hidden" => self.model.hidden = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "proj_dim" => self.model.proj_dim = parse(key, v)?,
            "layer_norm" => self.model.layer_norm = parse(key, v)?,
            "share_projection" => self.model.share_projection = parse(key, v)?,
            "fp_bits" => self.model.fp_bits = parse(key, v)?,
            "lambda_ab" => self.weights.ab = parse(key, v)?,
            "lambda_frag" => self.weights.frag = parse(key, v)?,
            "lambda_topo" => self.weights.topo = parse(key, v)?,
            "lambda_scaf" => self.weights.scaf = parse(key, v)?,
            "tau" => self.weights.tau = parse(key, v)?,
            "lr" => self.adam.lr = parse(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse(key, v)?,
            "coupled_weight_decay" => self.adam.coupled_weight_decay = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, v)?,
            "finetune_batch" => self.finetune_batch = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        RunConfig::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(ConfigError::Invalid)?;
        self.weights.validate().map_err(ConfigError::Invalid)?;
        if self.pretrain_epochs == 0 || self.pretrain_batch == 0 || self.finetune_epochs == 0 || self.finetune_batch == 0 {
            return Err(ConfigError::Invalid("epochs and batch sizes must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(ConfigError::Invalid("vocab_size must be positive".into()));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 || self.adam.weight_decay.is_nan() || self.adam.weight_decay < 0.0 {
            return Err(ConfigError::Invalid("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("variant", self.variant.name().to_string());
        kv("loss_variant", self.loss_variant.name().to_string());
        kv("layers", self.model.layers.to_string());
        kv("hidden", self.model.hidden.to_string());
        kv("dropout", self.model.dropout.to_string());
        kv("proj_dim", self.model.proj_dim.to_string());
        kv("layer_norm", self.model.layer_norm.to_string());
        kv("share_projection", self.model.share_projection.to_string());
        kv("fp_bits", self.model.fp_bits.to_string());
        kv("lambda_ab", self.weights.ab.to_string());
        kv("lambda_frag", self.weights.frag.to_string());
        kv("lambda_topo", self.weights.topo.to_string());
        kv("lambda_scaf", self.weights.scaf.to_string());
        kv("tau", self.weights.tau.to_string());
        kv("lr", self.adam.lr.to_string());
        kv("weight_decay", self.adam.weight_decay.to_string());
        kv("coupled_weight_decay", self.adam.coupled_weight_decay.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("pretrain_batch", self.pretrain_batch.to_string());
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("finetune_batch", self.finetune_batch.to_string());
        kv("threads", self.threads.to_string());
        s
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Hash of the settings that change cached graphs and targets.
    pub fn preprocess_hash(&self) -> u64 {
        fnv1a64(format!("variant={} fp_bits={}", self.variant.name(), self.model.fp_bits).as_bytes())
    }

    /// Hash of the settings that fix parameter shapes.
    pub fn architecture_hash(&self) -> u64 {
        let m = &self.model;
        fnv1a64(format!("{} {} {} {} {} {} {}", m.layers, m.hidden, m.proj_dim, m.layer_norm, m.share_projection, m.n_groups, m.fp_bits).as_bytes())
    }
}
