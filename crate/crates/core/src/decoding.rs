//! Turning head probabilities into a dialogue-state update.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{informable_slots, DialogueState, Service, DONTCARE};
use crate::error::{DstError, Result};
use crate::labeling::{CarryoverStatus, IntentStatus, TurnLabels, TurnSnapshot, UserStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub binary_threshold: f64,
    pub disabled_carryover: Vec<CarryoverStatus>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            binary_threshold: 0.5,
            disabled_carryover: Vec::new(),
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.binary_threshold > 0.0 && self.binary_threshold < 1.0) {
            return Err(DstError::Config(format!(
                "binary_threshold must be in (0, 1), got {}",
                self.binary_threshold
            )));
        }
        if self.disabled_carryover.contains(&CarryoverStatus::None) {
            return Err(DstError::Config("the none carryover class cannot be disabled".into()));
        }
        Ok(())
    }
}

/// Per-head probabilities for one (turn, service) example, indexed in schema
/// order. Heads for categorical slots have an empty span row and vice versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProbs {
    pub intent_status: [f64; 2],
    /// Over `I(n)`.
    pub intent_value: Vec<f64>,
    /// Over `S(n)`.
    pub requested: Vec<f64>,
    /// The rest is over `S_inf(n)`.
    pub user_status: Vec<[f64; 3]>,
    pub carryover: Vec<[f64; 4]>,
    /// Over `V(s)`; empty for non-categorical slots.
    pub categorical: Vec<Vec<f64>>,
    /// Over the user tokens that made it into the input; empty for categorical slots.
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
    /// Over `S_prev`; entries cut by truncation have probability 0.
    pub cross: Vec<Vec<f64>>,
    /// User tokens removed from the front by truncation.
    pub user_offset: usize,
}

fn one_hot<const N: usize>(i: usize) -> [f64; N] {
    let mut a = [0.0; N];
    a[i] = 1.0;
    a
}

fn one_hot_vec(n: usize, i: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if let Some(i) = i {
        v[i] = 1.0;
    }
    v
}

impl HeadProbs {
    /// Probabilities that put all mass on the gold labels. Unresolvable slots
    /// are decoded as unchanged.
    pub fn from_labels(labels: &TurnLabels, service: &Service, s_prev_len: usize, user_len: usize) -> HeadProbs {
        let inf = informable_slots(service);
        let mut out = HeadProbs {
            intent_status: one_hot(match labels.intent_status {
                IntentStatus::None => 0,
                IntentStatus::Active => 1,
            }),
            intent_value: one_hot_vec(
                service.intents.len(),
                labels
                    .intent_value
                    .filter(|_| labels.intent_status == IntentStatus::Active),
            ),
            requested: labels.requested.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
            user_status: Vec::new(),
            carryover: Vec::new(),
            categorical: Vec::new(),
            start: Vec::new(),
            end: Vec::new(),
            cross: Vec::new(),
            user_offset: 0,
        };
        for (name, label) in inf.iter().zip(&labels.slots) {
            let slot = service.slot(name).expect("informable slot exists");
            out.user_status
                .push(one_hot(label.user_status.unwrap_or(UserStatus::None).index()));
            out.carryover
                .push(one_hot(label.carryover_status.unwrap_or(CarryoverStatus::None).index()));
            if slot.is_categorical {
                out.categorical
                    .push(one_hot_vec(slot.possible_values.len(), label.categorical_value));
                out.start.push(Vec::new());
                out.end.push(Vec::new());
            } else {
                out.categorical.push(Vec::new());
                out.start.push(one_hot_vec(user_len, label.span.map(|s| s.0)));
                out.end.push(one_hot_vec(user_len, label.span.map(|s| s.1)));
            }
            out.cross.push(one_hot_vec(s_prev_len, label.cross_service_source));
        }
        out
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if x <= xs[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Best (start, end) with start <= end under start_prob * end_prob.
pub fn best_span(start: &[f64], end: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (i, &s) in start.iter().enumerate() {
        for (j, &e) in end.iter().enumerate().skip(i) {
            let score = s * e;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some(((i, j), score));
            }
        }
    }
    best.map(|(span, _)| span)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotUpdate {
    Keep,
    Set(String),
    SetDontcare,
}

/// Counters for carryover decisions that could not be carried out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeDiagnostics {
    pub empty_carryover_source: usize,
    pub empty_span: usize,
}

impl DecodeDiagnostics {
    pub fn merge(&mut self, other: DecodeDiagnostics) {
        self.empty_carryover_source += other.empty_carryover_source;
        self.empty_span += other.empty_span;
    }
}

pub fn decode_intent(probs: &HeadProbs, prev_intent: &str, service: &Service) -> String {
    if probs.intent_status[1] > probs.intent_status[0] {
        if let Some(i) = argmax(&probs.intent_value) {
            return service.intents[i].name.clone();
        }
    }
    prev_intent.to_string()
}

pub fn decode_requested(probs: &HeadProbs, service: &Service, options: &DecodeOptions) -> BTreeSet<String> {
    service
        .slots
        .iter()
        .zip(&probs.requested)
        .filter(|(_, &p)| p > options.binary_threshold)
        .map(|(s, _)| s.name.clone())
        .collect()
}

/// Everything a slot decision can read besides the probabilities.
pub struct DecodeInput<'a> {
    pub snapshot: &'a TurnSnapshot,
    pub service: &'a Service,
    /// Byte ranges of all user tokens.
    pub user_tokens: &'a [(usize, usize)],
}

/// The carryover class after disabled classes are mapped to none.
pub fn effective_carryover(probs: &[f64; 4], options: &DecodeOptions) -> CarryoverStatus {
    let class = CarryoverStatus::ALL[argmax(probs).unwrap_or(0)];
    if options.disabled_carryover.contains(&class) {
        CarryoverStatus::None
    } else {
        class
    }
}

/// Decision for the `k`-th informable slot.
pub fn decode_slot_update(
    probs: &HeadProbs,
    k: usize,
    slot_name: &str,
    input: &DecodeInput<'_>,
    options: &DecodeOptions,
    diag: &mut DecodeDiagnostics,
) -> SlotUpdate {
    let slot = input.service.slot(slot_name).expect("informable slot exists");
    match UserStatus::ALL[argmax(&probs.user_status[k]).unwrap_or(0)] {
        UserStatus::Active => {
            if slot.is_categorical {
                return match argmax(&probs.categorical[k]) {
                    Some(i) => SlotUpdate::Set(slot.possible_values[i].clone()),
                    None => SlotUpdate::Keep,
                };
            }
            let Some((s, e)) = best_span(&probs.start[k], &probs.end[k]) else {
                diag.empty_span += 1;
                return SlotUpdate::Keep;
            };
            let (s, e) = (s + probs.user_offset, e + probs.user_offset);
            let text = &input.snapshot.user_utterance;
            return match (input.user_tokens.get(s), input.user_tokens.get(e)) {
                (Some(a), Some(b)) => SlotUpdate::Set(text[a.0..b.1].to_string()),
                _ => {
                    diag.empty_span += 1;
                    SlotUpdate::Keep
                }
            };
        }
        UserStatus::Dontcare => return SlotUpdate::SetDontcare,
        UserStatus::None => {}
    }
    let snap = input.snapshot;
    let source = match effective_carryover(&probs.carryover[k], options) {
        CarryoverStatus::None => return SlotUpdate::Keep,
        CarryoverStatus::InSysUttr => snap.sys_uttr_values.get(slot_name).cloned(),
        CarryoverStatus::InServiceHist => snap.prev_sys_values.get(slot_name).cloned(),
        CarryoverStatus::InCrossServiceHist => {
            let row = &probs.cross[k];
            argmax(row)
                .filter(|&i| row[i] > 0.0)
                .and_then(|i| snap.s_prev.get(i))
                .map(|e| e.value.clone())
        }
    };
    match source {
        Some(v) if !v.is_empty() => SlotUpdate::Set(v),
        _ => {
            diag.empty_carryover_source += 1;
            SlotUpdate::Keep
        }
    }
}

pub fn update_state(
    prev: &DialogueState,
    intent: String,
    requested: BTreeSet<String>,
    updates: &[(String, SlotUpdate)],
) -> DialogueState {
    let mut slot_values: BTreeMap<String, String> = prev.slot_values.clone();
    for (slot, u) in updates {
        match u {
            SlotUpdate::Keep => {}
            SlotUpdate::Set(v) => {
                slot_values.insert(slot.clone(), v.clone());
            }
            SlotUpdate::SetDontcare => {
                slot_values.insert(slot.clone(), DONTCARE.to_string());
            }
        }
    }
    DialogueState {
        active_intent: intent,
        requested_slots: requested,
        slot_values,
    }
}

/// Full decode of one example into the new state of its service.
pub fn decode_turn(
    probs: &HeadProbs,
    input: &DecodeInput<'_>,
    options: &DecodeOptions,
    diag: &mut DecodeDiagnostics,
) -> DialogueState {
    let (state, _) = decode_turn_detailed(probs, input, options, diag);
    state
}

/// Like [`decode_turn`], also returning the per-slot updates in `S_inf` order.
pub fn decode_turn_detailed(
    probs: &HeadProbs,
    input: &DecodeInput<'_>,
    options: &DecodeOptions,
    diag: &mut DecodeDiagnostics,
) -> (DialogueState, Vec<(String, SlotUpdate)>) {
    let service = input.service;
    let prev = &input.snapshot.prev_state;
    let intent = decode_intent(probs, &prev.active_intent, service);
    let requested = decode_requested(probs, service, options);
    let updates: Vec<(String, SlotUpdate)> = informable_slots(service)
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let u = decode_slot_update(probs, k, &name, input, options, diag);
            (name, u)
        })
        .collect();
    (update_state(prev, intent, requested, &updates), updates)
}
