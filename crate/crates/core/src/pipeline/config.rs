//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoding::DecodeOptions;
use crate::encoding::EncoderOptions;
use crate::error::{DstError, Result};
use crate::labeling::CarryoverStatus;
use crate::model::{EncoderSpec, LossWeights, ModelConfig};
use crate::optim::AdamWConfig;

/// Environment variable that overrides `data_root`.
pub const DATA_ROOT_ENV: &str = "DST_DATA_ROOT";

pub const ABLATIONS: [&str; 7] = [
    "no_system_actions",
    "slot_descriptions",
    "no_previous_state",
    "no_schema_augmentation",
    "no_schema_augmentation_word_dropout",
    "no_binary_features",
    "no_shuffle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Tiny,
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // data
    pub data_root: PathBuf,
    pub train_split: String,
    pub dev_split: String,
    pub output_dir: PathBuf,
    /// Train only on the first N dialogues; 0 means all.
    pub train_dialogues: usize,
    /// Dev dialogues scored at each evaluation; 0 means all.
    pub dev_dialogues: usize,

    // encoder
    pub encoder: EncoderKind,
    pub pretrained_dir: PathBuf,
    pub tiny_layers: usize,
    pub tiny_hidden: usize,
    pub tiny_heads: usize,
    pub tiny_intermediate: usize,
    pub vocab_min_count: usize,
    pub precision: Precision,

    // heads
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub hidden_dropout: f64,
    pub use_binary_features: bool,

    // input
    pub max_len: usize,
    pub use_system_actions: bool,
    pub use_slot_descriptions: bool,
    pub include_previous_state: bool,
    pub word_dropout_p: f64,
    pub schema_augment_p: f64,
    pub shuffle_schema: bool,
    pub thesaurus_path: Option<PathBuf>,

    // loss
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,

    // optimization
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub eval_every: u64,
    pub log_every: u64,

    // decoding
    pub binary_threshold: f64,
    pub disabled_carryover: Vec<String>,

    // seeds; unset ones derive from `seed` (+0 data, +1 augment, +2 init)
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub augment_seed: Option<u64>,
    pub init_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data/sgd"),
            train_split: "train".into(),
            dev_split: "dev".into(),
            output_dir: PathBuf::from("runs/default"),
            train_dialogues: 0,
            dev_dialogues: 200,
            encoder: EncoderKind::Pretrained,
            pretrained_dir: PathBuf::from("models/bert-base-uncased"),
            tiny_layers: 2,
            tiny_hidden: 64,
            tiny_heads: 2,
            tiny_intermediate: 256,
            vocab_min_count: 1,
            precision: Precision::F32,
            head_hidden: 0,
            head_dropout: 0.3,
            hidden_dropout: 0.1,
            use_binary_features: true,
            max_len: 512,
            use_system_actions: true,
            use_slot_descriptions: false,
            include_previous_state: true,
            word_dropout_p: 0.1,
            schema_augment_p: 0.1,
            shuffle_schema: true,
            thesaurus_path: None,
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            w5: 1.0,
            w6: 1.0,
            w7: 1.0,
            w8: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            learning_rate: 2e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            adam_eps: 1e-6,
            max_grad_norm: 1.0,
            batch_size: 16,
            total_steps: 55_000,
            eval_every: 4_000,
            log_every: 100,
            binary_threshold: 0.5,
            disabled_carryover: Vec::new(),
            seed: 42,
            data_seed: None,
            augment_seed: None,
            init_seed: None,
        }
    }
}

fn prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(DstError::Config(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| DstError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| DstError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `DST_DATA_ROOT` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            self.data_root = PathBuf::from(root);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(DstError::Config(format!(
                "warmup_fraction must be in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(DstError::Config("total_steps and batch_size must be positive".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.total_steps {
            return Err(DstError::Config(format!(
                "eval_every must be in 1..=total_steps ({}), got {}",
                self.total_steps, self.eval_every
            )));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.weight_decay < 0.0
            || self.adam_eps <= 0.0
            || self.max_grad_norm < 0.0
        {
            return Err(DstError::Config("invalid optimizer settings".into()));
        }
        self.loss_weights().validate()?;
        prob("word_dropout_p", self.word_dropout_p)?;
        prob("schema_augment_p", self.schema_augment_p)?;
        self.encoder_options().validate()?;
        self.model_config().validate()?;
        self.decode_options()?.validate()?;
        Ok(())
    }

    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "no_system_actions" => self.use_system_actions = false,
            "slot_descriptions" => self.use_slot_descriptions = true,
            "no_previous_state" => self.include_previous_state = false,
            "no_schema_augmentation" => self.schema_augment_p = 0.0,
            "no_schema_augmentation_word_dropout" => {
                self.schema_augment_p = 0.0;
                self.word_dropout_p = 0.0;
            }
            "no_binary_features" => self.use_binary_features = false,
            "no_shuffle" => self.shuffle_schema = false,
            other => {
                return Err(DstError::Config(format!(
                    "unknown ablation `{other}`; expected one of {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn augment_seed(&self) -> u64 {
        self.augment_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed.wrapping_add(2))
    }

    pub fn encoder_options(&self) -> EncoderOptions {
        EncoderOptions {
            max_len: self.max_len,
            use_system_actions: self.use_system_actions,
            use_slot_descriptions: self.use_slot_descriptions,
            include_previous_state: self.include_previous_state,
            word_dropout_p: self.word_dropout_p,
            schema_augment_p: self.schema_augment_p,
            shuffle_schema: self.shuffle_schema,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let encoder = match self.encoder {
            EncoderKind::Tiny => EncoderSpec::Tiny {
                layers: self.tiny_layers,
                hidden: self.tiny_hidden,
                heads: self.tiny_heads,
                intermediate: self.tiny_intermediate,
            },
            EncoderKind::Pretrained => EncoderSpec::Pretrained {
                path: self.pretrained_dir.clone(),
            },
        };
        ModelConfig {
            encoder,
            head_hidden: self.head_hidden,
            head_dropout: self.head_dropout,
            hidden_dropout: self.hidden_dropout,
            use_binary_features: self.use_binary_features,
            max_position: self.max_len.max(1),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            w4: self.w4,
            w5: self.w5,
            w6: self.w6,
            w7: self.w7,
            w8: self.w8,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            warmup_fraction: self.warmup_fraction,
            total_steps: self.total_steps,
        }
    }

    pub fn decode_options(&self) -> Result<DecodeOptions> {
        let disabled = self
            .disabled_carryover
            .iter()
            .map(|n| {
                CarryoverStatus::parse(n).ok_or_else(|| DstError::Config(format!("unknown carryover class `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecodeOptions {
            binary_threshold: self.binary_threshold,
            disabled_carryover: disabled,
        })
    }

    /// Hash of everything that shapes a training trajectory. Paths, logging
    /// cadence and evaluation-only settings are excluded.
    pub fn training_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.data_root = PathBuf::new();
        c.log_every = 0;
        c.eval_every = 0;
        c.dev_dialogues = 0;
        c.binary_threshold = 0.0;
        c.disabled_carryover.clear();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
