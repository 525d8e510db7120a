//! Serialization of one (turn, service) pair into the encoder input.
//!
//! Layout, with `[SEP]` between parts:
//!
//! ```text
//! [CLS] system actions [SEP] user utterance [SEP]
//!       service prev-intent [INTENT] intent ... [SEP]
//!       [SLOT] slot prev-value [VALUE] v ... [SLOT] ... [SEP]
//!       other-service [SLOT] (system) slot value ... [SEP]
//! ```
//!
//! The index map records, in canonical schema order, where every marker the
//! heads read from ended up, so shuffling the rendered order never changes
//! which output row belongs to which schema element.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_text, Thesaurus};
use crate::context::{DialogueContext, ValueSource};
use crate::corpus::{normalize_name, Action, Schema, Service, NONE_INTENT};
use crate::error::{DstError, Result};
use crate::labeling::TurnSnapshot;
use crate::tokenizer::{self, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderOptions {
    pub max_len: usize,
    pub use_system_actions: bool,
    pub use_slot_descriptions: bool,
    pub include_previous_state: bool,
    pub word_dropout_p: f64,
    pub schema_augment_p: f64,
    pub shuffle_schema: bool,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions {
            max_len: 512,
            use_system_actions: true,
            use_slot_descriptions: false,
            include_previous_state: true,
            word_dropout_p: 0.1,
            schema_augment_p: 0.1,
            shuffle_schema: true,
        }
    }
}

impl EncoderOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("word_dropout_p", self.word_dropout_p),
            ("schema_augment_p", self.schema_augment_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DstError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.max_len < 8 {
            return Err(DstError::Config("max_len must be at least 8".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Text-level parts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentElem {
    /// Index into `I(n)`.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueElem {
    /// Index into `V(s)`.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotElem {
    /// Index into `S(n)`.
    pub index: usize,
    pub text: String,
    pub description: Option<String>,
    pub prev_value: Option<String>,
    pub informable: bool,
    pub categorical: bool,
    pub values: Vec<ValueElem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevElem {
    /// Index into `S_prev`.
    pub index: usize,
    pub service_text: String,
    pub slot_text: String,
    pub value: String,
    pub system: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputParts {
    pub system: String,
    pub user: String,
    pub service_text: String,
    pub prev_intent: Option<String>,
    pub intents: Vec<IntentElem>,
    pub slots: Vec<SlotElem>,
    pub prev: Vec<PrevElem>,
}

/// Part 1 rendering: `act slot value...` per action, joined by `[ACT]`.
pub fn serialize_system_actions(actions: &[Action]) -> String {
    actions
        .iter()
        .map(|a| {
            let mut words = vec![normalize_name(&a.act)];
            if a.slot == "intent" {
                words.extend(a.values.iter().map(|v| normalize_name(v)));
            } else {
                if !a.slot.is_empty() {
                    words.push(normalize_name(&a.slot));
                }
                words.extend(a.values.iter().cloned());
            }
            words.join(" ")
        })
        .collect::<Vec<_>>()
        .join(&format!(" {} ", tokenizer::ACT))
}

fn intent_text(name: &str) -> String {
    if name == NONE_INTENT {
        tokenizer::NONE_VALUE.to_string()
    } else {
        normalize_name(name)
    }
}

pub fn build_parts(snapshot: &TurnSnapshot, service: &Service, options: &EncoderOptions) -> InputParts {
    let system = if options.use_system_actions {
        serialize_system_actions(&snapshot.system_actions)
    } else {
        snapshot.system_utterance.clone()
    };
    let intents = service
        .intents
        .iter()
        .enumerate()
        .map(|(index, i)| IntentElem {
            index,
            text: intent_text(&i.name),
        })
        .collect();
    let slots = service
        .slots
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let informable = service.is_informable(&s.name);
            SlotElem {
                index,
                text: normalize_name(&s.name),
                description: (options.use_slot_descriptions && !s.description.is_empty())
                    .then(|| s.description.clone()),
                prev_value: (options.include_previous_state && informable).then(|| {
                    snapshot
                        .prev_state
                        .slot_values
                        .get(&s.name)
                        .cloned()
                        .unwrap_or_else(|| tokenizer::NONE_VALUE.to_string())
                }),
                informable,
                categorical: s.is_categorical,
                values: if informable && s.is_categorical {
                    s.possible_values
                        .iter()
                        .enumerate()
                        .map(|(index, v)| ValueElem { index, text: v.clone() })
                        .collect()
                } else {
                    Vec::new()
                },
            }
        })
        .collect();
    let prev = snapshot
        .s_prev
        .iter()
        .enumerate()
        .map(|(index, e)| PrevElem {
            index,
            service_text: normalize_name(&e.service),
            slot_text: normalize_name(&e.slot),
            value: e.value.clone(),
            system: e.source == ValueSource::SystemHistory,
        })
        .collect();
    InputParts {
        system,
        user: snapshot.user_utterance.clone(),
        service_text: normalize_name(&service.name),
        prev_intent: options
            .include_previous_state
            .then(|| intent_text(snapshot.prev_intent())),
        intents,
        slots,
        prev,
    }
}

/// Synonym replacement / random swap on intent, slot and value names.
pub fn apply_schema_augmentation(parts: &mut InputParts, p: f64, thesaurus: &Thesaurus, rng: &mut impl Rng) {
    for intent in &mut parts.intents {
        intent.text = augment_text(&intent.text, p, thesaurus, rng);
    }
    for slot in &mut parts.slots {
        slot.text = augment_text(&slot.text, p, thesaurus, rng);
        for v in &mut slot.values {
            v.text = augment_text(&v.text, p, thesaurus, rng);
        }
    }
}

/// Independently permutes intents, slots (and each slot's values) and the
/// other-service entries.
pub fn shuffle_schema_elements(parts: &mut InputParts, rng: &mut impl Rng) {
    parts.intents.shuffle(rng);
    parts.slots.shuffle(rng);
    for slot in &mut parts.slots {
        slot.values.shuffle(rng);
    }
    parts.prev.shuffle(rng);
}

// ---------------------------------------------------------------------------
// Token-level parts and assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SlotTokens {
    index: usize,
    informable: bool,
    categorical: bool,
    body: Vec<u32>,
    values: Vec<(usize, Vec<u32>)>,
}

#[derive(Debug, Clone)]
struct PrevTokens {
    index: usize,
    service: Vec<u32>,
    body: Vec<u32>,
}

#[derive(Debug, Clone)]
struct PartTokens {
    system: Vec<u32>,
    user: Vec<u32>,
    head: Vec<u32>,
    intents: Vec<(usize, Vec<u32>)>,
    slots: Vec<SlotTokens>,
    prev: Vec<PrevTokens>,
}

impl PartTokens {
    fn from_parts(parts: &InputParts, tok: &Tokenizer) -> Self {
        let mut head = tok.marked_ids(&parts.service_text);
        if let Some(p) = &parts.prev_intent {
            head.extend(tok.marked_ids(p));
        }
        PartTokens {
            system: tok.marked_ids(&parts.system),
            // The user utterance is plain text, never marker-expanded, so its
            // tokens line up with the offsets used for span labels.
            user: tok.ids(&parts.user),
            head,
            intents: parts
                .intents
                .iter()
                .map(|i| (i.index, tok.marked_ids(&i.text)))
                .collect(),
            slots: parts
                .slots
                .iter()
                .map(|s| {
                    let mut body = tok.marked_ids(&s.text);
                    if let Some(d) = &s.description {
                        body.extend(tok.ids(d));
                    }
                    if let Some(v) = &s.prev_value {
                        body.extend(tok.marked_ids(v));
                    }
                    SlotTokens {
                        index: s.index,
                        informable: s.informable,
                        categorical: s.categorical,
                        body,
                        values: s.values.iter().map(|v| (v.index, tok.ids(&v.text))).collect(),
                    }
                })
                .collect(),
            prev: parts
                .prev
                .iter()
                .map(|p| {
                    let mut body = Vec::new();
                    if p.system {
                        body.extend(tok.ids("system"));
                    }
                    body.extend(tok.ids(&p.slot_text));
                    body.extend(tok.ids(&p.value));
                    PrevTokens {
                        index: p.index,
                        service: tok.ids(&p.service_text),
                        body,
                    }
                })
                .collect(),
        }
    }

    fn schema_len(&self) -> usize {
        self.head.len()
            + self.intents.iter().map(|(_, t)| 1 + t.len()).sum::<usize>()
            + 1
            + self
                .slots
                .iter()
                .map(|s| 1 + s.body.len() + s.values.iter().map(|(_, v)| 1 + v.len()).sum::<usize>())
                .sum::<usize>()
            + 1
    }

    fn prev_len(&self) -> usize {
        self.prev.iter().map(|p| p.service.len() + 1 + p.body.len()).sum()
    }

    fn total_len(&self) -> usize {
        1 + self.system.len() + 1 + self.user.len() + 1 + self.schema_len() + self.prev_len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub cls: usize,
    /// `[INTENT]` position per intent, in `I(n)` order.
    pub intents: Vec<usize>,
    /// Part-4 `[SLOT]` position per slot, in `S(n)` order.
    pub slots: Vec<usize>,
    /// Indices into `slots` of the informable slots, in schema order.
    pub informable: Vec<usize>,
    /// Indices into `informable` of the categorical ones.
    pub categorical: Vec<usize>,
    /// Indices into `informable` of the non-categorical ones.
    pub noncategorical: Vec<usize>,
    /// `[VALUE]` positions per entry of `categorical`, in `V(s)` order.
    pub values: Vec<Vec<usize>>,
    /// (S_prev index, Part-5 `[SLOT]` position), sorted by S_prev index.
    /// Entries removed by truncation are absent.
    pub prev: Vec<(usize, usize)>,
    pub user_start: usize,
    pub user_len: usize,
    /// User tokens removed from the head of Part 2 by truncation.
    pub user_dropped: usize,
}

impl IndexMap {
    pub fn value_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn user_range(&self) -> std::ops::Range<usize> {
        self.user_start..self.user_start + self.user_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub index_map: IndexMap,
    /// Start offsets of Parts 1..=5 plus the total length.
    pub part_starts: [usize; 6],
    pub overflow: bool,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Removes material until the sequence fits: trailing Part-5 entries first,
/// then the tail of Part 1, then the head of Part 2. Parts 3-4 are never cut;
/// returns true when they alone still do not fit.
fn truncate_parts(p: &mut PartTokens, max_len: usize) -> (bool, usize) {
    while p.total_len() > max_len && !p.prev.is_empty() {
        p.prev.pop();
    }
    while p.total_len() > max_len && !p.system.is_empty() {
        p.system.pop();
    }
    let mut dropped = 0;
    while p.total_len() > max_len && !p.user.is_empty() {
        p.user.remove(0);
        dropped += 1;
    }
    (p.total_len() > max_len, dropped)
}

fn assemble(mut p: PartTokens, tok: &Tokenizer, max_len: usize) -> EncodedInput {
    let (overflow, user_dropped) = truncate_parts(&mut p, max_len);
    if overflow {
        log::warn!(
            "schema parts need {} tokens, over max_len {max_len}; emitting oversized input",
            p.total_len()
        );
    }
    let cls = tok.special_id(tokenizer::CLS);
    let sep = tok.special_id(tokenizer::SEP);
    let intent_id = tok.special_id(tokenizer::INTENT);
    let slot_id = tok.special_id(tokenizer::SLOT);
    let value_id = tok.special_id(tokenizer::VALUE);

    let mut ids = Vec::with_capacity(p.total_len());
    let mut starts = [0usize; 6];
    ids.push(cls);
    starts[0] = ids.len();
    ids.extend(&p.system);
    ids.push(sep);
    starts[1] = ids.len();
    let user_start = ids.len();
    ids.extend(&p.user);
    ids.push(sep);
    let first_segment_len = ids.len();
    starts[2] = ids.len();
    ids.extend(&p.head);
    let mut intents = vec![0; p.intents.len()];
    for (index, text) in &p.intents {
        intents[*index] = ids.len();
        ids.push(intent_id);
        ids.extend(text);
    }
    ids.push(sep);
    starts[3] = ids.len();
    let n_slots = p.slots.len();
    let mut slots = vec![0; n_slots];
    let mut slot_informable = vec![false; n_slots];
    let mut slot_categorical = vec![false; n_slots];
    let mut slot_values: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    for s in &p.slots {
        slots[s.index] = ids.len();
        slot_informable[s.index] = s.informable;
        slot_categorical[s.index] = s.categorical;
        ids.push(slot_id);
        ids.extend(&s.body);
        let mut positions = vec![0; s.values.len()];
        for (vi, text) in &s.values {
            positions[*vi] = ids.len();
            ids.push(value_id);
            ids.extend(text);
        }
        slot_values[s.index] = positions;
    }
    ids.push(sep);
    starts[4] = ids.len();
    let mut prev = Vec::with_capacity(p.prev.len());
    for e in &p.prev {
        ids.extend(&e.service);
        prev.push((e.index, ids.len()));
        ids.push(slot_id);
        ids.extend(&e.body);
    }
    prev.sort_unstable();
    ids.push(sep);
    starts[5] = ids.len();

    let informable: Vec<usize> = (0..n_slots).filter(|&i| slot_informable[i]).collect();
    let categorical: Vec<usize> = (0..informable.len())
        .filter(|&k| slot_categorical[informable[k]])
        .collect();
    let noncategorical: Vec<usize> = (0..informable.len())
        .filter(|&k| !slot_categorical[informable[k]])
        .collect();
    let values = categorical
        .iter()
        .map(|&k| slot_values[informable[k]].clone())
        .collect();

    let len = ids.len();
    EncodedInput {
        segment_ids: (0..len).map(|i| u32::from(i >= first_segment_len)).collect(),
        attention_mask: vec![1; len],
        token_ids: ids,
        index_map: IndexMap {
            cls: 0,
            intents,
            slots,
            informable,
            categorical,
            noncategorical,
            values,
            prev,
            user_start,
            user_len: p.user.len(),
            user_dropped,
        },
        part_starts: starts,
        overflow,
    }
}

/// Tokenizes and lays out already-built parts, truncating to `max_len`.
pub fn encode_parts(parts: &InputParts, tok: &Tokenizer, max_len: usize) -> EncodedInput {
    assemble(PartTokens::from_parts(parts, tok), tok, max_len)
}

/// Deterministic encoding (no augmentation).
pub fn encode(snapshot: &TurnSnapshot, service: &Service, tok: &Tokenizer, options: &EncoderOptions) -> EncodedInput {
    encode_parts(&build_parts(snapshot, service, options), tok, options.max_len)
}

/// Training-time encoding: schema augmentation, then shuffling, then word dropout.
pub fn encode_augmented(
    snapshot: &TurnSnapshot,
    service: &Service,
    tok: &Tokenizer,
    options: &EncoderOptions,
    thesaurus: &Thesaurus,
    rng: &mut impl Rng,
) -> EncodedInput {
    let mut parts = build_parts(snapshot, service, options);
    if options.schema_augment_p > 0.0 {
        apply_schema_augmentation(&mut parts, options.schema_augment_p, thesaurus, rng);
    }
    if options.shuffle_schema {
        shuffle_schema_elements(&mut parts, rng);
    }
    let mut enc = encode_parts(&parts, tok, options.max_len);
    if options.word_dropout_p > 0.0 {
        apply_word_dropout(&mut enc, options.word_dropout_p, tok.unk_id(), rng);
    }
    enc
}

/// Convenience wrapper building the input straight from a running context.
pub fn build_input(
    ctx: &DialogueContext,
    schema: &Schema,
    service: &Service,
    user_utterance: &str,
    tok: &Tokenizer,
    options: &EncoderOptions,
) -> EncodedInput {
    let snapshot = TurnSnapshot::capture(ctx, schema, service, user_utterance);
    encode(&snapshot, service, tok, options)
}

/// Replaces each Part-2 token with `unk_id` independently with probability `p`.
pub fn apply_word_dropout(enc: &mut EncodedInput, p: f64, unk_id: u32, rng: &mut impl Rng) {
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 {
        return;
    }
    for pos in enc.index_map.user_range() {
        if rng.random_bool(p) {
            enc.token_ids[pos] = unk_id;
        }
    }
}

/// Human-readable rendering of the five parts.
pub fn render_debug(enc: &EncodedInput, tok: &Tokenizer) -> String {
    let words = |range: std::ops::Range<usize>| -> String {
        enc.token_ids[range]
            .iter()
            .map(|&id| tok.vocab().token(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let s = enc.part_starts;
    let mut out = String::new();
    let labels = [
        "part1 system",
        "part2 user",
        "part3 intents",
        "part4 slots",
        "part5 history",
    ];
    for (k, label) in labels.iter().enumerate() {
        let end = s[k + 1].saturating_sub(1).max(s[k]);
        let _ = writeln!(out, "{label:>14}: {}", words(s[k]..end));
    }
    if enc.overflow {
        out.push_str("      overflow: true\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_rendering() {
        let a = Action::new("OFFER", "restaurant_name", &["World Gourmet"]);
        assert_eq!(
            serialize_system_actions(std::slice::from_ref(&a)),
            "offer restaurant name World Gourmet"
        );
        assert_eq!(serialize_system_actions(&[Action::new("CONFIRM", "", &[])]), "confirm");
        assert_eq!(
            serialize_system_actions(&[a, Action::new("REQUEST", "city", &[])]),
            "offer restaurant name World Gourmet [ACT] request city"
        );
        assert_eq!(serialize_system_actions(&[]), "");
    }

    #[test]
    fn options_validate_probabilities() {
        let o = EncoderOptions {
            word_dropout_p: 1.5,
            ..Default::default()
        };
        assert!(o.validate().is_err());
        assert!(EncoderOptions::default().validate().is_ok());
    }
}
