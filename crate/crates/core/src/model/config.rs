use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Randomly initialized encoder trained from scratch.
    Tiny {
        layers: usize,
        hidden: usize,
        heads: usize,
        intermediate: usize,
    },
    /// A BERT checkpoint directory with `vocab.txt`, `config.json` and `model.safetensors`.
    Pretrained { path: PathBuf },
}

impl EncoderSpec {
    pub fn tiny(layers: usize, hidden: usize, heads: usize) -> Self {
        EncoderSpec::Tiny {
            layers,
            hidden,
            heads,
            intermediate: 4 * hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderSpec,
    /// Hidden width of the head networks; 0 means the encoder width.
    pub head_hidden: usize,
    pub head_dropout: f64,
    /// Dropout inside the encoder (embeddings, attention output, feed-forward output).
    pub hidden_dropout: f64,
    pub use_binary_features: bool,
    /// Position table size for the tiny encoder.
    pub max_position: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderSpec::tiny(2, 64, 2),
            head_hidden: 0,
            head_dropout: 0.3,
            hidden_dropout: 0.1,
            use_binary_features: true,
            max_position: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("head_dropout", self.head_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(DstError::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if let EncoderSpec::Tiny {
            layers,
            hidden,
            heads,
            intermediate,
        } = &self.encoder
        {
            if *hidden == 0 || *heads == 0 || hidden % heads != 0 {
                return Err(DstError::Config(format!(
                    "tiny encoder hidden size {hidden} must be a positive multiple of heads {heads}"
                )));
            }
            if *layers == 0 || *intermediate == 0 {
                return Err(DstError::Config(
                    "tiny encoder needs layers and intermediate > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Resolved encoder shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub layer_norm_eps: f64,
    pub initializer_range: f64,
}

impl EncoderDims {
    /// The uncased base configuration.
    pub fn base_uncased() -> Self {
        EncoderDims {
            vocab_size: 30522,
            hidden: 768,
            layers: 12,
            heads: 12,
            intermediate: 3072,
            max_position: 512,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        }
    }

    pub fn embedding_params(&self) -> usize {
        (self.vocab_size + self.max_position + self.type_vocab) * self.hidden + 2 * self.hidden
    }

    pub fn layer_params(&self) -> usize {
        let h = self.hidden;
        let i = self.intermediate;
        4 * (h * h + h) + 2 * (2 * h) + (h * i + i) + (i * h + h)
    }

    /// Encoder parameters, without any pooler.
    pub fn param_count(&self) -> usize {
        self.embedding_params() + self.layers * self.layer_params()
    }
}
