//! Model and optimizer state in one safetensors file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{DstError, Result};
use crate::model::config::{EncoderDims, ModelConfig};
use crate::model::Model;
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tokenizer::{Tokenizer, Vocab};
use crate::util::write_atomic;

pub struct Checkpoint<F: Scalar> {
    pub model: Model<F>,
    pub tokenizer: Tokenizer,
    pub optimizer: Option<AdamState<F>>,
    pub step: u64,
    /// Free-form entries written by the caller.
    pub meta: BTreeMap<String, String>,
}

fn dtype_of<F: Scalar>() -> Dtype {
    if F::BYTES == 4 {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

fn to_bytes<F: Scalar>(a: &Array2<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * F::BYTES);
    for &x in a.iter() {
        x.write_le(&mut out);
    }
    out
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> DstError {
    DstError::Checkpoint(format!("{}: {msg}", path.display()))
}

/// Writes the model, vocabulary and optional optimizer moments atomically.
pub fn save<F: Scalar>(
    path: &Path,
    model: &Model<F>,
    tokenizer: &Tokenizer,
    optimizer: Option<&AdamState<F>>,
    step: u64,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, value) in model.params.names.iter().zip(&model.params.values) {
        buffers.push((format!("param.{name}"), value.shape().to_vec(), to_bytes(value)));
    }
    if let Some(opt) = optimizer {
        for (i, name) in model.params.names.iter().enumerate() {
            buffers.push((format!("adam_m.{name}"), opt.m[i].shape().to_vec(), to_bytes(&opt.m[i])));
            buffers.push((format!("adam_v.{name}"), opt.v[i].shape().to_vec(), to_bytes(&opt.v[i])));
        }
    }
    let views: Vec<(String, TensorView<'_>)> = buffers
        .iter()
        .map(|(n, shape, data)| {
            TensorView::new(dtype_of::<F>(), shape.clone(), data)
                .map(|v| (n.clone(), v))
                .map_err(|e| ckpt_err(path, e))
        })
        .collect::<Result<_>>()?;

    let mut header: HashMap<String, String> = meta.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    header.insert("model_config".into(), serde_json::to_string(&model.config)?);
    header.insert("dims".into(), serde_json::to_string(&model.dims)?);
    header.insert("vocab".into(), tokenizer.vocab().tokens().join("\n"));
    header.insert("step".into(), step.to_string());
    header.insert("dtype".into(), F::DTYPE.into());
    header.insert(
        "adam_step".into(),
        optimizer.map(|o| o.step.to_string()).unwrap_or_default(),
    );
    let bytes = safetensors::serialize(views, &Some(header)).map_err(|e| ckpt_err(path, e))?;
    write_atomic(path, &bytes)
}

fn read_array<F: Scalar>(st: &SafeTensors<'_>, name: &str, shape: &[usize], path: &Path) -> Result<Array2<F>> {
    let t = st.tensor(name).map_err(|e| ckpt_err(path, format!("{name}: {e}")))?;
    if t.shape() != shape {
        return Err(ckpt_err(
            path,
            format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
        ));
    }
    let data = t.data();
    let values: Vec<F> = match t.dtype() {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|b| F::from_f64_lossy(f32::read_le(b) as f64))
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|b| F::from_f64_lossy(f64::read_le(b)))
            .collect(),
        other => return Err(ckpt_err(path, format!("{name} has dtype {other:?}"))),
    };
    Array2::from_shape_vec((shape[0], shape[1]), values).map_err(|e| ckpt_err(path, e))
}

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = std::fs::read(path).map_err(|e| ckpt_err(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let mut meta: BTreeMap<String, String> = header
        .metadata()
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    let mut take = |key: &str| {
        meta.remove(key)
            .ok_or_else(|| ckpt_err(path, format!("missing metadata `{key}`")))
    };
    let config: ModelConfig = serde_json::from_str(&take("model_config")?)?;
    let dims: EncoderDims = serde_json::from_str(&take("dims")?)?;
    let vocab = Vocab::from_tokens(take("vocab")?.split('\n').map(str::to_string).collect());
    let step: u64 = take("step")?.parse().map_err(|e| ckpt_err(path, e))?;
    take("dtype")?;
    let adam_step = take("adam_step")?;
    let tokenizer = Tokenizer::new(vocab);
    if tokenizer.vocab_size() != dims.vocab_size {
        return Err(ckpt_err(
            path,
            format!(
                "vocabulary has {} entries, embeddings {}",
                tokenizer.vocab_size(),
                dims.vocab_size
            ),
        ));
    }

    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
    let mut model = Model::<F>::from_dims(&config, dims, 0)?;
    let expected = model.params.len() * if adam_step.is_empty() { 1 } else { 3 };
    if st.len() != expected {
        return Err(ckpt_err(path, format!("{} tensors, expected {expected}", st.len())));
    }
    for i in 0..model.params.len() {
        let shape = model.params.values[i].shape().to_vec();
        let name = format!("param.{}", model.params.names[i]);
        model.params.values[i] = read_array(&st, &name, &shape, path)?;
    }
    let optimizer = if adam_step.is_empty() {
        None
    } else {
        let mut opt = AdamState::new(&model.params);
        opt.step = adam_step.parse().map_err(|e| ckpt_err(path, e))?;
        for i in 0..model.params.len() {
            let shape = model.params.values[i].shape().to_vec();
            let n = &model.params.names[i];
            opt.m[i] = read_array(&st, &format!("adam_m.{n}"), &shape, path)?;
            opt.v[i] = read_array(&st, &format!("adam_v.{n}"), &shape, path)?;
        }
        Some(opt)
    };
    Ok(Checkpoint {
        model,
        tokenizer,
        optimizer,
        step,
        meta,
    })
}
