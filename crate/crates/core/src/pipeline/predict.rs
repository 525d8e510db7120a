//! Turn-by-turn prediction with the context advanced by predicted states.

use std::collections::{BTreeMap, BTreeSet};

use crate::context::{involved_services, DialogueContext};
use crate::corpus::{Dialogue, DialogueState, Schema, Service, Speaker};
use crate::decoding::{decode_turn, DecodeDiagnostics, DecodeInput, DecodeOptions, HeadProbs};
use crate::encoding::{encode, EncoderOptions};
use crate::error::{DstError, Result};
use crate::evaluation::PredictionRecord;
use crate::labeling::{derive_turn_labels, make_example, turn_states, TurnExample};
use crate::model::{Model, ModelInput};
use crate::scalar::Scalar;
use crate::tokenizer::Tokenizer;

/// Produces head probabilities for one unlabeled example. `None` keeps the
/// service's previous state.
pub trait Predictor: Sync {
    fn predict(&self, example: &TurnExample, service: &Service) -> Result<Option<HeadProbs>>;
}

/// Involved services per user turn, from the gold annotation.
pub fn involved_per_turn(gold: &Dialogue) -> Vec<BTreeSet<String>> {
    let mut prev: BTreeMap<String, DialogueState> = BTreeMap::new();
    gold.turns
        .iter()
        .map(|turn| {
            if turn.speaker != Speaker::User {
                return BTreeSet::new();
            }
            let inv = involved_services(&turn.frames, &prev);
            prev.extend(turn_states(turn));
            inv
        })
        .collect()
}

/// Predicts every user frame of one dialogue. Gold annotation is consulted
/// only to decide which services are involved in each turn; everything the
/// predictor sees comes from the redacted dialogue.
pub fn run_dialogue<P: Predictor + ?Sized>(
    gold: &Dialogue,
    schema: &Schema,
    tok: &Tokenizer,
    predictor: &P,
    options: &DecodeOptions,
    diag: &mut DecodeDiagnostics,
) -> Result<Vec<PredictionRecord>> {
    let involved = involved_per_turn(gold);
    let dialogue = gold.redacted();
    let mut ctx = DialogueContext::new(&dialogue.dialogue_id);
    let mut out = Vec::new();
    for (ti, turn) in dialogue.turns.iter().enumerate() {
        if turn.speaker == Speaker::System {
            ctx.observe_system_turn(turn);
            continue;
        }
        let mut states = BTreeMap::new();
        for frame in &turn.frames {
            let service = schema.service(&frame.service)?;
            let state = if involved[ti].contains(&frame.service) {
                let ex = make_example(
                    &ctx,
                    schema,
                    tok,
                    &dialogue.dialogue_id,
                    ti,
                    turn,
                    &frame.service,
                    false,
                )?;
                match predictor.predict(&ex, service)? {
                    Some(probs) => {
                        let input = DecodeInput {
                            snapshot: &ex.snapshot,
                            service,
                            user_tokens: &ex.user_tokens,
                        };
                        decode_turn(&probs, &input, options, diag)
                    }
                    None => ex.snapshot.prev_state.clone(),
                }
            } else {
                ctx.previous_state(&frame.service)
            };
            out.push(PredictionRecord {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn_index: ti,
                service: frame.service.clone(),
                state: state.clone(),
            });
            states.insert(frame.service.clone(), state);
        }
        ctx.observe_user_turn(schema, &states)?;
    }
    Ok(out)
}

/// Runs all dialogues, spread over the available cores; output order follows input order.
pub fn run_dialogues<P: Predictor + ?Sized>(
    dialogues: &[Dialogue],
    schema: &Schema,
    tok: &Tokenizer,
    predictor: &P,
    options: &DecodeOptions,
) -> Result<(Vec<PredictionRecord>, DecodeDiagnostics)> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(dialogues.len().max(1));
    let chunk = dialogues.len().div_ceil(workers).max(1);
    let results: Vec<Result<(Vec<PredictionRecord>, DecodeDiagnostics)>> = std::thread::scope(|s| {
        let handles: Vec<_> = dialogues
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut diag = DecodeDiagnostics::default();
                    let mut recs = Vec::new();
                    for d in part {
                        recs.extend(run_dialogue(d, schema, tok, predictor, options, &mut diag)?);
                    }
                    Ok((recs, diag))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut records = Vec::new();
    let mut diag = DecodeDiagnostics::default();
    for r in results {
        let (recs, d) = r?;
        records.extend(recs);
        diag.merge(d);
    }
    Ok((records, diag))
}

/// Injects gold head labels, derived against whatever context the loop built.
pub struct OraclePredictor<'a> {
    gold: BTreeMap<&'a str, &'a Dialogue>,
    tok: &'a Tokenizer,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(dialogues: &'a [Dialogue], tok: &'a Tokenizer) -> Self {
        OraclePredictor {
            gold: dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect(),
            tok,
        }
    }
}

impl Predictor for OraclePredictor<'_> {
    fn predict(&self, ex: &TurnExample, service: &Service) -> Result<Option<HeadProbs>> {
        let dialogue = self
            .gold
            .get(ex.id.dialogue_id.as_str())
            .ok_or_else(|| DstError::Alignment(format!("no gold dialogue {}", ex.id.dialogue_id)))?;
        let frame = dialogue
            .turns
            .get(ex.id.turn_index)
            .and_then(|t| t.frame(&ex.id.service))
            .ok_or_else(|| DstError::Alignment(format!("no gold frame for {}", ex.id.service)))?;
        let tokens = self.tok.tokenize(&ex.snapshot.user_utterance);
        let labels = derive_turn_labels(&ex.snapshot, frame, service, &tokens)?;
        Ok(Some(HeadProbs::from_labels(
            &labels,
            service,
            ex.snapshot.s_prev.len(),
            tokens.len(),
        )))
    }
}

/// Runs a trained model in evaluation mode.
pub struct ModelPredictor<'a, F: Scalar> {
    pub model: &'a Model<F>,
    pub tok: &'a Tokenizer,
    pub options: EncoderOptions,
}

impl<F: Scalar> Predictor for ModelPredictor<'_, F> {
    fn predict(&self, ex: &TurnExample, service: &Service) -> Result<Option<HeadProbs>> {
        let enc = encode(&ex.snapshot, service, self.tok, &self.options);
        if enc.len() > self.model.dims.max_position {
            log::warn!("{}: input of {} tokens skipped", ex.id, enc.len());
            return Ok(None);
        }
        let input = ModelInput {
            input: &enc,
            features: &ex.snapshot.features,
        };
        let out = self.model.forward(&[input])?;
        Ok(Some(out[0].probs(&enc.index_map, ex.snapshot.s_prev.len())))
    }
}
