//! Label acquisition: for each (user turn, involved service) find where every
//! changed slot value came from and turn that into targets for the nine heads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::context::{involved_services, BinaryFeatures, DialogueContext, PrevSlotEntry};
use crate::corpus::{
    informable_slots, Action, Dialogue, DialogueState, Frame, Schema, Service, Speaker, Turn, DONTCARE,
};
use crate::error::{DstError, Result};
use crate::tokenizer::{Token, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntentStatus {
    None,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UserStatus {
    None,
    Active,
    Dontcare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CarryoverStatus {
    None,
    InSysUttr,
    InServiceHist,
    InCrossServiceHist,
}

impl UserStatus {
    pub const ALL: [UserStatus; 3] = [UserStatus::None, UserStatus::Active, UserStatus::Dontcare];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl CarryoverStatus {
    pub const ALL: [CarryoverStatus; 4] = [
        CarryoverStatus::None,
        CarryoverStatus::InSysUttr,
        CarryoverStatus::InServiceHist,
        CarryoverStatus::InCrossServiceHist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Some(Self::None),
            "in_sys_uttr" => Some(Self::InSysUttr),
            "in_service_hist" => Some(Self::InServiceHist),
            "in_cross_service_hist" => Some(Self::InCrossServiceHist),
            _ => None,
        }
    }
}

/// Targets for one informable slot. `None` in a status field means the slot
/// is excluded from that head's loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLabel {
    pub slot: String,
    pub user_status: Option<UserStatus>,
    pub carryover_status: Option<CarryoverStatus>,
    /// Index into `V(s)` when the user gave a categorical value.
    pub categorical_value: Option<usize>,
    /// Inclusive token range into the user-utterance tokens.
    pub span: Option<(usize, usize)>,
    /// Index into `S_prev` for cross-service carryover.
    pub cross_service_source: Option<usize>,
    pub unresolvable: bool,
}

impl SlotLabel {
    fn unchanged(slot: &str) -> Self {
        SlotLabel {
            slot: slot.to_string(),
            user_status: Some(UserStatus::None),
            carryover_status: Some(CarryoverStatus::None),
            categorical_value: None,
            span: None,
            cross_service_source: None,
            unresolvable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabels {
    pub intent_status: IntentStatus,
    /// Index into `I(n)`; meaningful only when the status is active.
    pub intent_value: Option<usize>,
    /// Over `S(n)` in schema order.
    pub requested: Vec<bool>,
    /// Over `S_inf(n)` in schema order.
    pub slots: Vec<SlotLabel>,
}

impl TurnLabels {
    pub fn changed_slots(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| {
                s.unresolvable
                    || s.user_status != Some(UserStatus::None)
                    || s.carryover_status != Some(CarryoverStatus::None)
            })
            .count()
    }

    pub fn unresolvable_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.unresolvable).count()
    }
}

/// Everything the encoder and the decoder need to know about the dialogue at
/// one (user turn, service) pair. Contains no gold information about the
/// current turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSnapshot {
    pub service: String,
    pub system_utterance: String,
    pub system_actions: Vec<Action>,
    pub user_utterance: String,
    pub prev_state: DialogueState,
    pub sys_uttr_values: BTreeMap<String, String>,
    pub prev_sys_values: BTreeMap<String, String>,
    pub s_prev: Vec<PrevSlotEntry>,
    /// Over `S(n)` in schema order.
    pub features: Vec<BinaryFeatures>,
}

impl TurnSnapshot {
    pub fn capture(ctx: &DialogueContext, schema: &Schema, service: &Service, user_utterance: &str) -> TurnSnapshot {
        let name = &service.name;
        let collect = |f: &dyn Fn(&str) -> Option<String>| -> BTreeMap<String, String> {
            service
                .slots
                .iter()
                .filter_map(|s| f(&s.name).map(|v| (s.name.clone(), v)))
                .collect()
        };
        TurnSnapshot {
            service: name.clone(),
            system_utterance: ctx.last_system_utterance.clone(),
            system_actions: ctx.system_actions_for(name).to_vec(),
            user_utterance: user_utterance.to_string(),
            prev_state: ctx.previous_state(name),
            sys_uttr_values: collect(&|s| ctx.sys_uttr_slot_value(name, s).map(str::to_string)),
            prev_sys_values: collect(&|s| ctx.prev_sys_slot_value(name, s).map(str::to_string)),
            s_prev: ctx.compute_s_prev(schema, name),
            features: service.slots.iter().map(|s| ctx.binary_features(service, s)).collect(),
        }
    }

    pub fn prev_intent(&self) -> &str {
        &self.prev_state.active_intent
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExampleId {
    pub dialogue_id: String,
    /// Position of the user turn in the dialogue's turn list.
    pub turn_index: usize,
    pub service: String,
}

impl std::fmt::Display for ExampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dialogue_id, self.turn_index, self.service)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnExample {
    pub id: ExampleId,
    pub snapshot: TurnSnapshot,
    pub user_tokens: Vec<(usize, usize)>,
    pub labels: Option<TurnLabels>,
    pub gold_state: Option<DialogueState>,
    #[serde(default)]
    pub gold_variants: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub examples: usize,
    pub changed_slots: usize,
    pub unresolvable_slots: usize,
}

impl LabelStats {
    pub fn add(&mut self, labels: &TurnLabels) {
        self.examples += 1;
        self.changed_slots += labels.changed_slots();
        self.unresolvable_slots += labels.unresolvable_slots();
    }

    pub fn unresolvable_rate(&self) -> f64 {
        if self.changed_slots == 0 {
            0.0
        } else {
            self.unresolvable_slots as f64 / self.changed_slots as f64
        }
    }
}

/// Case-insensitive, whitespace-collapsed form used for label-time matching.
pub fn match_key(value: &str) -> String {
    value
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn matches_any(candidate: &str, variants: &[String]) -> bool {
    let key = match_key(candidate);
    variants.iter().any(|v| match_key(v) == key)
}

pub fn derive_intent_labels(
    prev_intent: &str,
    frame: &Frame,
    service: &Service,
) -> Result<(IntentStatus, Option<usize>)> {
    let state = frame
        .state
        .as_ref()
        .ok_or_else(|| DstError::Labeling("user frame without state".into()))?;
    let idx = service.intent_index(&state.active_intent).ok_or_else(|| {
        DstError::Labeling(format!(
            "intent `{}` not in service `{}`",
            state.active_intent, service.name
        ))
    })?;
    if state.active_intent != prev_intent {
        Ok((IntentStatus::Active, Some(idx)))
    } else {
        Ok((IntentStatus::None, None))
    }
}

pub fn derive_requested_labels(frame: &Frame, service: &Service) -> Vec<bool> {
    let requested = frame.state.as_ref().map(|s| &s.requested_slots);
    service
        .slots
        .iter()
        .map(|s| requested.is_some_and(|r| r.contains(&s.name)))
        .collect()
}

/// Converts a character range (as annotated in the corpus) into byte offsets.
fn char_range_to_bytes(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut bounds = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let mut s = None;
    let mut e = None;
    for (ci, b) in (&mut bounds).enumerate() {
        if ci == start {
            s = Some(b);
        }
        if ci == end {
            e = Some(b);
            break;
        }
    }
    Some((s?, e?))
}

/// Maps a byte range onto the covering tokens, snapping outward.
pub fn byte_range_to_tokens(tokens: &[Token], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = tokens.iter().position(|t| t.end > start)?;
    let last = tokens.iter().rposition(|t| t.start < end)?;
    (first <= last).then_some((first, last))
}

fn find_span(
    frame: &Frame,
    slot: &str,
    utterance: &str,
    tokens: &[Token],
    variants: &[String],
) -> Option<(usize, usize)> {
    for span in frame.slot_spans.iter().filter(|s| s.slot == slot) {
        let Some((s, e)) = char_range_to_bytes(utterance, span.start, span.exclusive_end) else {
            continue;
        };
        if matches_any(&utterance[s..e], variants) {
            return byte_range_to_tokens(tokens, s, e);
        }
    }
    // Annotation missing: fall back to a case-insensitive search.
    let lower = utterance.to_lowercase();
    if lower.len() != utterance.len() {
        return None;
    }
    for v in variants {
        let needle = v.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        if let Some(pos) = lower.find(&needle) {
            return byte_range_to_tokens(tokens, pos, pos + needle.len());
        }
    }
    None
}

/// Labels for every informable slot, following the source-search precedence
/// user action > dontcare > system utterance > service history > other service.
pub fn derive_slot_labels(
    snapshot: &TurnSnapshot,
    frame: &Frame,
    service: &Service,
    user_tokens: &[Token],
) -> Result<Vec<SlotLabel>> {
    let state = frame
        .state
        .as_ref()
        .ok_or_else(|| DstError::Labeling("user frame without state".into()))?;
    let mut out = Vec::new();
    for slot_name in informable_slots(service) {
        let slot = service.slot(&slot_name).expect("informable slot exists");
        let Some(gold) = state.slot_values.get(&slot_name) else {
            out.push(SlotLabel::unchanged(&slot_name));
            continue;
        };
        let variants = frame.variants(&slot_name);
        if slot.is_categorical {
            for v in &variants {
                if v != DONTCARE && !slot.possible_values.contains(v) {
                    return Err(DstError::Labeling(format!(
                        "categorical slot `{slot_name}` has gold value `{v}` outside its value set"
                    )));
                }
            }
        }
        let changed = match snapshot.prev_state.slot_values.get(&slot_name) {
            Some(prev) => !matches_any(prev, &variants),
            None => true,
        };
        if !changed {
            out.push(SlotLabel::unchanged(&slot_name));
            continue;
        }
        let mut label = SlotLabel {
            slot: slot_name.clone(),
            user_status: Some(UserStatus::None),
            carryover_status: Some(CarryoverStatus::None),
            categorical_value: None,
            span: None,
            cross_service_source: None,
            unresolvable: false,
        };
        let is_dontcare = gold == DONTCARE;
        let informed = frame
            .actions
            .iter()
            .any(|a| a.act == "INFORM" && a.slot == slot_name && a.values.iter().any(|v| matches_any(v, &variants)));

        if informed && !is_dontcare {
            if slot.is_categorical {
                let idx = slot.possible_values.iter().position(|v| v == gold);
                if let Some(idx) = idx {
                    label.user_status = Some(UserStatus::Active);
                    label.categorical_value = Some(idx);
                    out.push(label);
                    continue;
                }
            } else if let Some(span) = find_span(frame, &slot_name, &snapshot.user_utterance, user_tokens, &variants) {
                label.user_status = Some(UserStatus::Active);
                label.span = Some(span);
                out.push(label);
                continue;
            }
        }
        if is_dontcare {
            label.user_status = Some(UserStatus::Dontcare);
            out.push(label);
            continue;
        }
        if snapshot
            .sys_uttr_values
            .get(&slot_name)
            .is_some_and(|v| matches_any(v, &variants))
        {
            label.carryover_status = Some(CarryoverStatus::InSysUttr);
        } else if snapshot
            .prev_sys_values
            .get(&slot_name)
            .is_some_and(|v| matches_any(v, &variants))
        {
            label.carryover_status = Some(CarryoverStatus::InServiceHist);
        } else if let Some(idx) = snapshot.s_prev.iter().position(|e| matches_any(&e.value, &variants)) {
            label.carryover_status = Some(CarryoverStatus::InCrossServiceHist);
            label.cross_service_source = Some(idx);
        } else {
            label.user_status = None;
            label.carryover_status = None;
            label.unresolvable = true;
        }
        out.push(label);
    }
    Ok(out)
}

pub fn derive_turn_labels(
    snapshot: &TurnSnapshot,
    frame: &Frame,
    service: &Service,
    user_tokens: &[Token],
) -> Result<TurnLabels> {
    let (intent_status, intent_value) = derive_intent_labels(snapshot.prev_intent(), frame, service)?;
    Ok(TurnLabels {
        intent_status,
        intent_value,
        requested: derive_requested_labels(frame, service),
        slots: derive_slot_labels(snapshot, frame, service, user_tokens)?,
    })
}

/// Builds the example for one involved service of a user turn.
#[allow(clippy::too_many_arguments)]
pub fn make_example(
    ctx: &DialogueContext,
    schema: &Schema,
    tokenizer: &Tokenizer,
    dialogue_id: &str,
    turn_index: usize,
    turn: &Turn,
    service_name: &str,
    with_labels: bool,
) -> Result<TurnExample> {
    let service = schema.service(service_name)?;
    let snapshot = TurnSnapshot::capture(ctx, schema, service, &turn.utterance);
    let tokens = tokenizer.tokenize(&turn.utterance);
    let frame = turn.frame(service_name);
    let labels = match (with_labels, frame) {
        (true, Some(f)) => Some(derive_turn_labels(&snapshot, f, service, &tokens)?),
        _ => None,
    };
    Ok(TurnExample {
        id: ExampleId {
            dialogue_id: dialogue_id.to_string(),
            turn_index,
            service: service_name.to_string(),
        },
        user_tokens: tokens.iter().map(|t| (t.start, t.end)).collect(),
        labels,
        gold_state: frame.and_then(|f| f.state.clone()),
        gold_variants: frame.map(|f| f.value_variants.clone()).unwrap_or_default(),
        snapshot,
    })
}

/// Gold states of every frame of a user turn.
pub fn turn_states(turn: &Turn) -> BTreeMap<String, DialogueState> {
    turn.frames
        .iter()
        .filter_map(|f| f.state.clone().map(|s| (f.service.clone(), s)))
        .collect()
}

/// One example per (user turn, involved service), in dialogue order. In gold
/// mode the context advances with the gold states; in predicted mode examples
/// carry no labels and the caller is expected to drive the context itself, so
/// only the first user turn's context is meaningful.
pub fn build_turn_examples(
    dialogue: &Dialogue,
    schema: &Schema,
    tokenizer: &Tokenizer,
    mode: ContextMode,
    stats: &mut LabelStats,
) -> Result<Vec<TurnExample>> {
    let mut ctx = DialogueContext::new(&dialogue.dialogue_id);
    let mut gold_prev: BTreeMap<String, DialogueState> = BTreeMap::new();
    let mut out = Vec::new();
    for (ti, turn) in dialogue.turns.iter().enumerate() {
        match turn.speaker {
            Speaker::System => ctx.observe_system_turn(turn),
            Speaker::User => {
                let involved = involved_services(&turn.frames, &gold_prev);
                for frame in &turn.frames {
                    if !involved.contains(&frame.service) {
                        continue;
                    }
                    let ex = make_example(
                        &ctx,
                        schema,
                        tokenizer,
                        &dialogue.dialogue_id,
                        ti,
                        turn,
                        &frame.service,
                        mode == ContextMode::Gold,
                    )?;
                    if let Some(l) = &ex.labels {
                        stats.add(l);
                    }
                    out.push(ex);
                }
                let states = turn_states(turn);
                if mode == ContextMode::Gold {
                    ctx.observe_user_turn(schema, &states)?;
                }
                gold_prev.extend(states);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_ranges_handle_multibyte() {
        let text = "café at 6 pm";
        assert_eq!(char_range_to_bytes(text, 8, 12), Some((9, 13)));
        assert_eq!(&text[9..13], "6 pm");
        assert_eq!(char_range_to_bytes(text, 0, 99), None);
    }

    #[test]
    fn match_key_normalizes() {
        assert_eq!(match_key("  World   Gourmet "), "world gourmet");
    }
}
