//! Import of a BERT checkpoint in safetensors format.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use safetensors::{Dtype, SafeTensors};
use serde::Deserialize;

use crate::error::{DstError, Result};
use crate::model::config::{EncoderDims, ModelConfig};
use crate::model::Model;
use crate::scalar::{c, Scalar};
use crate::tokenizer::{require_vocab_file, Tokenizer};

const HINT: &str =
    "download the uncased BERT checkpoint (vocab.txt, config.json, model.safetensors) into this directory";

#[derive(Debug, Deserialize)]
struct BertConfig {
    vocab_size: usize,
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    #[serde(default = "two")]
    type_vocab_size: usize,
    #[serde(default = "eps")]
    layer_norm_eps: f64,
    #[serde(default = "init_range")]
    initializer_range: f64,
    #[serde(default = "gelu")]
    hidden_act: String,
}

fn two() -> usize {
    2
}
fn eps() -> f64 {
    1e-12
}
fn init_range() -> f64 {
    0.02
}
fn gelu() -> String {
    "gelu".into()
}

fn require(dir: &Path, file: &str) -> Result<std::path::PathBuf> {
    let path = dir.join(file);
    if path.exists() {
        Ok(path)
    } else {
        Err(DstError::MissingPretrained {
            path,
            hint: HINT.into(),
        })
    }
}

/// Decodes a tensor to f64 values in row-major order.
fn tensor_values(t: &safetensors::tensor::TensorView<'_>) -> Result<Vec<f64>> {
    let d = t.data();
    let out = match t.dtype() {
        Dtype::F32 => d
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => d
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::BF16 => d
            .chunks_exact(2)
            .map(|b| f32::from_bits((u16::from_le_bytes([b[0], b[1]]) as u32) << 16) as f64)
            .collect(),
        Dtype::F16 => d
            .chunks_exact(2)
            .map(|b| f16_to_f64(u16::from_le_bytes([b[0], b[1]])))
            .collect(),
        other => return Err(DstError::Checkpoint(format!("unsupported tensor dtype {other:?}"))),
    };
    Ok(out)
}

fn f16_to_f64(h: u16) -> f64 {
    let sign = if h >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((h >> 10) & 0x1f) as i32;
    let frac = (h & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        e => sign * (1.0 + frac / 1024.0) * 2f64.powi(e - 15),
    }
}

/// Name candidates in the checkpoint for one of our parameter names.
fn candidates(name: &str) -> Vec<String> {
    let mut out = vec![format!("bert.{name}"), name.to_string()];
    if name.contains("LayerNorm") {
        let old = name.replace(".weight", ".gamma").replace(".bias", ".beta");
        out.push(format!("bert.{old}"));
        out.push(old);
    }
    out
}

fn is_linear_weight(name: &str) -> bool {
    name.starts_with("encoder.") && name.ends_with(".weight") && !name.contains("LayerNorm")
}

/// Loads encoder weights from `dir`. The marker tokens are appended to the
/// vocabulary and their embedding rows keep their random initialization.
pub fn load<F: Scalar>(dir: &Path, config: &ModelConfig, seed: u64) -> Result<(Model<F>, Tokenizer)> {
    if !dir.is_dir() {
        return Err(DstError::MissingPretrained {
            path: dir.to_path_buf(),
            hint: HINT.into(),
        });
    }
    let vocab = require_vocab_file(dir)?;
    let cfg_path = require(dir, "config.json")?;
    let weights_path = require(dir, "model.safetensors")?;
    let bert: BertConfig =
        serde_json::from_slice(&std::fs::read(&cfg_path)?).map_err(|e| DstError::parse(&cfg_path, &e))?;
    if !bert.hidden_act.starts_with("gelu") {
        return Err(DstError::Config(format!("unsupported activation {}", bert.hidden_act)));
    }
    if vocab.len() != bert.vocab_size {
        return Err(DstError::Config(format!(
            "vocab.txt has {} entries but config.json declares {}",
            vocab.len(),
            bert.vocab_size
        )));
    }
    let tokenizer = Tokenizer::new(vocab);
    let dims = EncoderDims {
        vocab_size: tokenizer.vocab_size(),
        hidden: bert.hidden_size,
        layers: bert.num_hidden_layers,
        heads: bert.num_attention_heads,
        intermediate: bert.intermediate_size,
        max_position: bert.max_position_embeddings,
        type_vocab: bert.type_vocab_size,
        layer_norm_eps: bert.layer_norm_eps,
        initializer_range: bert.initializer_range,
    };
    let mut model = Model::<F>::from_dims(config, dims, seed)?;
    let bytes = std::fs::read(&weights_path)?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| DstError::Checkpoint(format!("{}: {e}", weights_path.display())))?;
    let available: BTreeMap<String, ()> = st.names().into_iter().map(|n| (n.to_string(), ())).collect();

    for i in 0..model.params.len() {
        let name = model.params.names[i].clone();
        if name.starts_with("heads.") {
            continue;
        }
        let Some(found) = candidates(&name).into_iter().find(|n| available.contains_key(n)) else {
            return Err(DstError::Checkpoint(format!(
                "{} has no tensor for {name}",
                weights_path.display()
            )));
        };
        let t = st
            .tensor(&found)
            .map_err(|e| DstError::Checkpoint(format!("{found}: {e}")))?;
        let shape = t.shape().to_vec();
        let values = tensor_values(&t)?;
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(DstError::Shape(format!("{found} has shape {shape:?}"))),
        };
        let src = Array2::from_shape_vec((rows, cols), values).map_err(|e| DstError::Shape(e.to_string()))?;
        let src = if is_linear_weight(&name) {
            src.reversed_axes()
        } else {
            src
        };
        let dst = &mut model.params.values[i];
        if name == "embeddings.word_embeddings.weight" {
            if src.ncols() != dst.ncols() || src.nrows() > dst.nrows() {
                return Err(DstError::Shape(format!(
                    "{found}: {:?} vs {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            for r in 0..src.nrows() {
                for k in 0..src.ncols() {
                    dst[[r, k]] = c(src[[r, k]]);
                }
            }
        } else {
            if src.shape() != dst.shape() {
                return Err(DstError::Shape(format!(
                    "{found}: {:?} vs {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.mapv(c);
        }
    }
    Ok((model, tokenizer))
}
