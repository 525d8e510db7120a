//! The multi-task model: one encoder, nine heads.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod heads;
pub mod loss;
pub mod pretrained;

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{self, Gradients, ParamStore, Tape, Var};
use crate::context::BinaryFeatures;
use crate::decoding::HeadProbs;
use crate::encoding::{EncodedInput, IndexMap};
use crate::error::{DstError, Result};
use crate::scalar::Scalar;

pub use config::{EncoderDims, EncoderSpec, ModelConfig};
pub use loss::{LossBreakdown, LossWeights, TargetSet, HEAD_NAMES};

use encoder::EncoderParams;
use heads::{empty, feature_matrix, HeadSet};

/// One encoded example plus the binary features of its slots, over `S(n)`.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub input: &'a EncodedInput,
    pub features: &'a [BinaryFeatures],
}

/// Head logits of one example on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `[1, 2]`
    pub intent_status: Var,
    /// `[|I|, 1]`
    pub intent_value: Var,
    /// `[|S|, 1]`
    pub requested: Var,
    /// `[|S_inf|, 3]`
    pub user_status: Var,
    /// `[|S_inf|, 4]`
    pub carryover: Var,
    /// `[total values, 1]`, categorical slots in order
    pub categorical: Var,
    /// `[non-categorical slots, user tokens]`
    pub start: Var,
    pub end: Var,
    /// `[|S_inf|, kept S_prev entries]`
    pub cross: Var,
}

/// Head logits of one example, detached from any tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs<F: Scalar> {
    pub intent_status: Array2<F>,
    pub intent_value: Array2<F>,
    pub requested: Array2<F>,
    pub user_status: Array2<F>,
    pub carryover: Array2<F>,
    pub categorical: Array2<F>,
    pub start: Array2<F>,
    pub end: Array2<F>,
    pub cross: Array2<F>,
}

impl<F: Scalar> HeadOutputs<F> {
    pub fn from_tape(tape: &Tape<'_, F>, v: &HeadVars) -> Self {
        HeadOutputs {
            intent_status: tape.value(v.intent_status).clone(),
            intent_value: tape.value(v.intent_value).clone(),
            requested: tape.value(v.requested).clone(),
            user_status: tape.value(v.user_status).clone(),
            carryover: tape.value(v.carryover).clone(),
            categorical: tape.value(v.categorical).clone(),
            start: tape.value(v.start).clone(),
            end: tape.value(v.end).clone(),
            cross: tape.value(v.cross).clone(),
        }
    }

    pub fn to_tape(&self, tape: &mut Tape<'_, F>) -> HeadVars {
        HeadVars {
            intent_status: tape.constant(self.intent_status.clone()),
            intent_value: tape.constant(self.intent_value.clone()),
            requested: tape.constant(self.requested.clone()),
            user_status: tape.constant(self.user_status.clone()),
            carryover: tape.constant(self.carryover.clone()),
            categorical: tape.constant(self.categorical.clone()),
            start: tape.constant(self.start.clone()),
            end: tape.constant(self.end.clone()),
            cross: tape.constant(self.cross.clone()),
        }
    }

    /// Normalized probabilities laid out for the decoder.
    pub fn probs(&self, map: &IndexMap, s_prev_len: usize) -> HeadProbs {
        let f = |x: F| x.to_f64_lossy();
        let sig = |x: F| f(autograd::sigmoid(x));
        let soft = |a: &Array2<F>| -> Vec<Vec<f64>> {
            autograd::softmax_rows(a.view())
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&x| f(x)).collect())
                .collect()
        };
        let n_inf = map.informable.len();
        let status = soft(&self.intent_status);
        let user = soft(&self.user_status);
        let carry = soft(&self.carryover);
        let start_rows = soft(&self.start);
        let end_rows = soft(&self.end);

        let mut categorical = vec![Vec::new(); n_inf];
        let mut offset = 0;
        for (ci, &k) in map.categorical.iter().enumerate() {
            let n = map.values[ci].len();
            categorical[k] = (offset..offset + n).map(|r| sig(self.categorical[[r, 0]])).collect();
            offset += n;
        }
        let mut start = vec![Vec::new(); n_inf];
        let mut end = vec![Vec::new(); n_inf];
        for (ni, &k) in map.noncategorical.iter().enumerate() {
            if map.user_len > 0 {
                start[k] = start_rows[ni].clone();
                end[k] = end_rows[ni].clone();
            }
        }
        let cross = (0..n_inf)
            .map(|k| {
                let mut row = vec![0.0; s_prev_len];
                for (j, &(src, _)) in map.prev.iter().enumerate() {
                    if src < s_prev_len {
                        row[src] = sig(self.cross[[k, j]]);
                    }
                }
                row
            })
            .collect();
        HeadProbs {
            intent_status: [status[0][0], status[0][1]],
            intent_value: self.intent_value.column(0).iter().map(|&x| sig(x)).collect(),
            requested: self.requested.column(0).iter().map(|&x| sig(x)).collect(),
            user_status: user.iter().map(|r| [r[0], r[1], r[2]]).collect(),
            carryover: carry.iter().map(|r| [r[0], r[1], r[2], r[3]]).collect(),
            categorical,
            start,
            end,
            cross,
            user_offset: map.user_dropped,
        }
    }
}

/// Where dropout randomness comes from; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub dims: EncoderDims,
    pub params: ParamStore<F>,
    encoder: EncoderParams,
    heads: HeadSet,
}

impl<F: Scalar> Model<F> {
    /// Architecture with deterministic random weights.
    pub fn from_dims(config: &ModelConfig, dims: EncoderDims, seed: u64) -> Result<Self> {
        config.validate()?;
        if !dims.hidden.is_multiple_of(dims.heads) {
            return Err(DstError::Config(format!(
                "hidden size {} not divisible by {} heads",
                dims.hidden, dims.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let encoder = EncoderParams::init(&mut params, &dims, &mut rng);
        let head_hidden = if config.head_hidden == 0 {
            dims.hidden
        } else {
            config.head_hidden
        };
        let heads = HeadSet::init(
            &mut params,
            dims.hidden,
            head_hidden,
            config.use_binary_features,
            dims.initializer_range,
            &mut rng,
        );
        Ok(Model {
            config: config.clone(),
            dims,
            params,
            encoder,
            heads,
        })
    }

    /// A freshly initialized tiny encoder over a vocabulary of `vocab_size`.
    pub fn init_tiny(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let EncoderSpec::Tiny {
            layers,
            hidden,
            heads,
            intermediate,
        } = config.encoder
        else {
            return Err(DstError::Config("init_tiny needs a tiny encoder spec".into()));
        };
        let dims = EncoderDims {
            vocab_size,
            hidden,
            layers,
            heads,
            intermediate,
            max_position: config.max_position,
            type_vocab: 2,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        };
        Self::from_dims(config, dims, seed)
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params
            .names
            .iter()
            .zip(&self.params.values)
            .filter(|(n, _)| !n.starts_with("heads."))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Evaluation-mode encoder output `[T, hidden]` for one input.
    pub fn hidden_states(&self, input: &EncodedInput) -> Result<Array2<F>> {
        let mut tape = Tape::new(&self.params);
        let x = encoder::encode(&mut tape, &self.encoder, &self.dims, input, 0.0, None)?;
        Ok(tape.value(x).clone())
    }

    /// Logits of every head for one example on `tape`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<'_, F>,
        ex: ModelInput<'_>,
        mut rng: DropoutRng<'_>,
    ) -> Result<HeadVars> {
        let map = &ex.input.index_map;
        if ex.features.len() != map.slots.len() {
            return Err(DstError::Shape(format!(
                "{} binary feature rows for {} slots",
                ex.features.len(),
                map.slots.len()
            )));
        }
        let len = ex.input.token_ids.len();
        let in_range = |p: usize| p < len;
        let all_pos = map
            .intents
            .iter()
            .chain(&map.slots)
            .chain(map.values.iter().flatten())
            .chain(map.prev.iter().map(|(_, p)| p))
            .copied()
            .chain([map.cls]);
        if !all_pos.clone().all(in_range) || map.user_start + map.user_len > len {
            return Err(DstError::Index("index map points past the input".into()));
        }
        if map.informable.iter().any(|&i| i >= map.slots.len()) {
            return Err(DstError::Index("informable slot index out of range".into()));
        }

        let hd = self.config.hidden_dropout;
        let p = self.config.head_dropout;
        let x = encoder::encode(tape, &self.encoder, &self.dims, ex.input, hd, rng.as_deref_mut())?;
        let h = &self.heads;

        let cls = tape.gather_rows(x, vec![map.cls])?;
        let intent_status = h.intent_status.forward(tape, cls, None, p, rng.as_deref_mut())?;

        let intent_value = if map.intents.is_empty() {
            empty(tape, 1)
        } else {
            let rows = tape.gather_rows(x, map.intents.clone())?;
            h.intent_value.forward(tape, rows, None, p, rng.as_deref_mut())?
        };

        let all_slots: Vec<usize> = (0..map.slots.len()).collect();
        let requested = if all_slots.is_empty() {
            empty(tape, 1)
        } else {
            let rows = tape.gather_rows(x, map.slots.clone())?;
            let f = feature_matrix::<F>(ex.features, &all_slots);
            h.requested.forward(tape, rows, Some(&f), p, rng.as_deref_mut())?
        };

        let n_inf = map.informable.len();
        let inf_pos: Vec<usize> = map.informable.iter().map(|&i| map.slots[i]).collect();
        let (user_status, carryover) = if n_inf == 0 {
            (empty(tape, 3), empty(tape, 4))
        } else {
            let rows = tape.gather_rows(x, inf_pos.clone())?;
            let f = feature_matrix::<F>(ex.features, &map.informable);
            let u = h.user_status.forward(tape, rows, Some(&f), p, rng.as_deref_mut())?;
            let c = h.carryover.forward(tape, rows, Some(&f), p, rng.as_deref_mut())?;
            (u, c)
        };

        let value_pos: Vec<usize> = map.values.iter().flatten().copied().collect();
        let categorical = if value_pos.is_empty() {
            empty(tape, 1)
        } else {
            let rows = tape.gather_rows(x, value_pos)?;
            h.categorical.forward(tape, rows, None, p, rng.as_deref_mut())?
        };

        let n_nc = map.noncategorical.len();
        let t = map.user_len;
        let (start, end) = if n_nc == 0 || t == 0 {
            let z = tape.constant(Array2::zeros((n_nc, t)));
            (z, z)
        } else {
            let user: Vec<usize> = map.user_range().collect();
            let tok_rows: Vec<usize> = (0..n_nc).flat_map(|_| user.iter().copied()).collect();
            let slot_rows: Vec<usize> = map
                .noncategorical
                .iter()
                .flat_map(|&k| std::iter::repeat_n(inf_pos[k], t))
                .collect();
            let a = tape.gather_rows(x, tok_rows)?;
            let b = tape.gather_rows(x, slot_rows)?;
            let pair = tape.concat_cols(vec![a, b])?;
            let s = h.start.forward(tape, pair, None, p, rng.as_deref_mut())?;
            let e = h.end.forward(tape, pair, None, p, rng.as_deref_mut())?;
            (tape.reshape(s, n_nc, t)?, tape.reshape(e, n_nc, t)?)
        };

        let n_prev = map.prev.len();
        let cross = if n_inf == 0 || n_prev == 0 {
            tape.constant(Array2::zeros((n_inf, n_prev)))
        } else {
            let prev_rows: Vec<usize> = (0..n_inf).flat_map(|_| map.prev.iter().map(|&(_, p)| p)).collect();
            let tgt_rows: Vec<usize> = inf_pos.iter().flat_map(|&q| std::iter::repeat_n(q, n_prev)).collect();
            let a = tape.gather_rows(x, prev_rows)?;
            let b = tape.gather_rows(x, tgt_rows)?;
            let pair = tape.concat_cols(vec![a, b])?;
            let logits = h.cross.forward(tape, pair, None, p, rng)?;
            tape.reshape(logits, n_inf, n_prev)?
        };

        Ok(HeadVars {
            intent_status,
            intent_value,
            requested,
            user_status,
            carryover,
            categorical,
            start,
            end,
            cross,
        })
    }

    fn check_batch(batch: &[ModelInput<'_>]) -> Result<()> {
        if batch.is_empty() {
            return Err(DstError::Shape("empty batch".into()));
        }
        if batch.iter().all(|ex| ex.input.attention_mask.iter().all(|&m| m == 0)) {
            return Err(DstError::Shape("batch contains only padding".into()));
        }
        Ok(())
    }

    /// Evaluation-mode logits for a batch.
    pub fn forward(&self, batch: &[ModelInput<'_>]) -> Result<Vec<HeadOutputs<F>>> {
        Self::check_batch(batch)?;
        batch
            .iter()
            .map(|ex| {
                let mut tape = Tape::new(&self.params);
                let v = self.forward_on_tape(&mut tape, *ex, None)?;
                Ok(HeadOutputs::from_tape(&tape, &v))
            })
            .collect()
    }

    /// Weighted loss and its gradients. With `rng`, dropout is active.
    pub fn loss_and_grads(
        &self,
        batch: &[ModelInput<'_>],
        targets: &[TargetSet<F>],
        weights: &LossWeights,
        mut rng: DropoutRng<'_>,
    ) -> Result<(LossBreakdown<F>, Gradients<F>)> {
        Self::check_batch(batch)?;
        if batch.len() != targets.len() {
            return Err(DstError::Shape(format!(
                "{} targets for {} examples",
                targets.len(),
                batch.len()
            )));
        }
        let mut tape = Tape::new(&self.params);
        let mut vars = Vec::with_capacity(batch.len());
        for ex in batch {
            vars.push(self.forward_on_tape(&mut tape, *ex, rng.as_deref_mut())?);
        }
        let (total, breakdown) = loss::loss_on_tape(&mut tape, &vars, targets, weights)?;
        let grads = tape.backward(total);
        Ok((breakdown, grads))
    }

    /// Evaluation-mode loss without gradients.
    pub fn loss(
        &self,
        batch: &[ModelInput<'_>],
        targets: &[TargetSet<F>],
        weights: &LossWeights,
    ) -> Result<LossBreakdown<F>> {
        let outputs = self.forward(batch)?;
        loss::compute_loss(&outputs, targets, weights)
    }
}
