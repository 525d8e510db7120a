//! Post-norm transformer encoder with BERT's layout.

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::encoding::EncodedInput;
use crate::error::{DstError, Result};
use crate::model::config::EncoderDims;
use crate::scalar::{c, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_norm: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub out_norm: Norm,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub word: ParamId,
    pub position: ParamId,
    pub token_type: ParamId,
    pub emb_norm: Norm,
    pub layers: Vec<LayerParams>,
}

pub(crate) fn normal_matrix<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut dyn RngCore) -> Array2<F> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || c(dist.sample(rng)))
}

pub(crate) fn add_linear<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    std: f64,
    rng: &mut dyn RngCore,
) -> Linear {
    Linear {
        w: store.add(
            format!("{name}.weight"),
            normal_matrix(fan_in, fan_out, std, rng),
            false,
        ),
        b: store.add(format!("{name}.bias"), Array2::zeros((1, fan_out)), true),
    }
}

fn add_norm<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize) -> Norm {
    Norm {
        gamma: store.add(format!("{name}.weight"), Array2::ones((1, width)), true),
        beta: store.add(format!("{name}.bias"), Array2::zeros((1, width)), true),
    }
}

impl EncoderParams {
    /// Registers freshly initialized encoder parameters. Linear weights are
    /// stored as `[in, out]`.
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, d: &EncoderDims, rng: &mut dyn RngCore) -> Self {
        let std = d.initializer_range;
        let h = d.hidden;
        let word = store.add(
            "embeddings.word_embeddings.weight",
            normal_matrix(d.vocab_size, h, std, rng),
            false,
        );
        let position = store.add(
            "embeddings.position_embeddings.weight",
            normal_matrix(d.max_position, h, std, rng),
            false,
        );
        let token_type = store.add(
            "embeddings.token_type_embeddings.weight",
            normal_matrix(d.type_vocab, h, std, rng),
            false,
        );
        let emb_norm = add_norm(store, "embeddings.LayerNorm", h);
        let layers = (0..d.layers)
            .map(|i| {
                let p = format!("encoder.layer.{i}");
                LayerParams {
                    query: add_linear(store, &format!("{p}.attention.self.query"), h, h, std, rng),
                    key: add_linear(store, &format!("{p}.attention.self.key"), h, h, std, rng),
                    value: add_linear(store, &format!("{p}.attention.self.value"), h, h, std, rng),
                    attn_out: add_linear(store, &format!("{p}.attention.output.dense"), h, h, std, rng),
                    attn_norm: add_norm(store, &format!("{p}.attention.output.LayerNorm"), h),
                    ffn_in: add_linear(store, &format!("{p}.intermediate.dense"), h, d.intermediate, std, rng),
                    ffn_out: add_linear(store, &format!("{p}.output.dense"), d.intermediate, h, std, rng),
                    out_norm: add_norm(store, &format!("{p}.output.LayerNorm"), h),
                }
            })
            .collect();
        EncoderParams {
            word,
            position,
            token_type,
            emb_norm,
            layers,
        }
    }
}

/// Inverted dropout; a no-op without an RNG.
pub(crate) fn dropout<F: Scalar>(tape: &mut Tape<'_, F>, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = c::<F>(1.0 / (1.0 - p));
    let (r, k) = tape.shape(x);
    let mask = Array2::from_shape_simple_fn((r, k), || if rng.random::<f64>() < p { F::zero() } else { keep });
    tape.mul_const(x, mask)
}

pub(crate) fn linear<F: Scalar>(tape: &mut Tape<'_, F>, x: Var, l: Linear) -> Result<Var> {
    let w = tape.param(l.w);
    let b = tape.param(l.b);
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn norm<F: Scalar>(tape: &mut Tape<'_, F>, x: Var, n: Norm, eps: f64) -> Result<Var> {
    let g = tape.param(n.gamma);
    let b = tape.param(n.beta);
    tape.layer_norm(x, g, b, eps)
}

/// Contextual token states `[T, hidden]` for one input.
pub fn encode<F: Scalar>(
    tape: &mut Tape<'_, F>,
    p: &EncoderParams,
    d: &EncoderDims,
    input: &EncodedInput,
    hidden_dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let t = input.token_ids.len();
    if t == 0 || input.attention_mask.iter().all(|&m| m == 0) {
        return Err(DstError::Shape("input has no attended tokens".into()));
    }
    if t > d.max_position {
        return Err(DstError::Index(format!(
            "sequence of {t} tokens exceeds {} positions",
            d.max_position
        )));
    }
    let ids: Vec<usize> = input.token_ids.iter().map(|&i| i as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= d.vocab_size) {
        return Err(DstError::Index(format!(
            "token id {bad} outside vocabulary of {}",
            d.vocab_size
        )));
    }
    let segs: Vec<usize> = input.segment_ids.iter().map(|&s| s as usize).collect();
    let word = tape.param(p.word);
    let pos = tape.param(p.position);
    let typ = tape.param(p.token_type);
    let we = tape.gather_rows(word, ids)?;
    let pe = tape.gather_rows(pos, (0..t).collect())?;
    let te = tape.gather_rows(typ, segs)?;
    let e = tape.add(we, pe)?;
    let e = tape.add(e, te)?;
    let e = norm(tape, e, p.emb_norm, d.layer_norm_eps)?;
    let mut x = dropout(tape, e, hidden_dropout, rng.as_deref_mut())?;

    let mask = input.attention_mask.contains(&0).then(|| {
        let row: Vec<F> = input
            .attention_mask
            .iter()
            .map(|&m| if m == 0 { c(-10000.0) } else { F::zero() })
            .collect();
        Array2::from_shape_fn((t, t), |(_, j)| row[j])
    });
    let dh = d.hidden / d.heads;
    let scale = c::<F>(1.0 / (dh as f64).sqrt());
    for layer in &p.layers {
        let q = linear(tape, x, layer.query)?;
        let k = linear(tape, x, layer.key)?;
        let v = linear(tape, x, layer.value)?;
        let mut heads = Vec::with_capacity(d.heads);
        for h in 0..d.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, a, b);
            let kh = tape.slice_cols(k, a, b);
            let vh = tape.slice_cols(v, a, b);
            let scores = tape.matmul_t(qh, kh)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = &mask {
                let m = tape.constant(m.clone());
                scores = tape.add(scores, m)?;
            }
            let probs = tape.softmax_rows(scores);
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_cols(heads)?;
        let attn = linear(tape, ctx, layer.attn_out)?;
        let attn = dropout(tape, attn, hidden_dropout, rng.as_deref_mut())?;
        let res = tape.add(attn, x)?;
        let x1 = norm(tape, res, layer.attn_norm, d.layer_norm_eps)?;
        let f = linear(tape, x1, layer.ffn_in)?;
        let f = tape.gelu(f);
        let f = linear(tape, f, layer.ffn_out)?;
        let f = dropout(tape, f, hidden_dropout, rng.as_deref_mut())?;
        let res = tape.add(f, x1)?;
        x = norm(tape, res, layer.out_norm, d.layer_norm_eps)?;
    }
    Ok(x)
}
