//! Running per-dialogue bookkeeping: what the user and the system said about
//! every slot so far, which services were visited, and the per-slot binary
//! features derived from it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Action, DialogueState, Frame, Schema, Service, Slot, Speaker, Turn, NONE_INTENT};
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceHistory {
    /// Last dialogue state observed for the service (gold or predicted).
    pub last_state: Option<DialogueState>,
    /// `prevSysSlotValue`: latest single-valued system mention strictly before turn t-1.
    pub prev_sys_slot_value: BTreeMap<String, String>,
    pub seen_before: bool,
    pub in_previous_state: bool,
}

impl ServiceHistory {
    pub fn prev_intent(&self) -> &str {
        self.last_state
            .as_ref()
            .map(|s| s.active_intent.as_str())
            .unwrap_or(NONE_INTENT)
    }

    pub fn prev_usr_slot_value(&self, slot: &str) -> Option<&str> {
        self.last_state
            .as_ref()
            .and_then(|s| s.slot_values.get(slot))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueSource {
    UserHistory,
    SystemHistory,
}

/// One candidate in `S_prev`: a slot of another service with a known value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevSlotEntry {
    pub service: String,
    pub slot: String,
    pub value: String,
    pub source: ValueSource,
}

/// `x_bin(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryFeatures(pub [bool; 6]);

impl BinaryFeatures {
    pub const DIM: usize = 6;

    pub fn service_new(&self) -> bool {
        self.0[0]
    }
    pub fn service_switched(&self) -> bool {
        self.0[1]
    }
    pub fn value_in_sys_uttr(&self) -> bool {
        self.0[2]
    }
    pub fn value_in_prev_sys_uttrs(&self) -> bool {
        self.0[3]
    }
    pub fn required_in_some_intent(&self) -> bool {
        self.0[4]
    }
    pub fn optional_in_all_intents(&self) -> bool {
        self.0[5]
    }

    pub fn to_f64(self) -> [f64; 6] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueContext {
    pub dialogue_id: String,
    /// Number of user turns observed so far.
    pub turn_index: usize,
    pub services: BTreeMap<String, ServiceHistory>,
    /// Services in order of first appearance.
    pub service_order: Vec<String>,
    /// `sysUttrSlotValue`, keyed by (service, slot); turn t-1 only.
    pub sys_uttr_slot_value: BTreeMap<(String, String), String>,
    /// Actions of turn t-1 per service, in frame order.
    pub last_system_actions: Vec<(String, Vec<Action>)>,
    pub last_system_utterance: String,
}

impl DialogueContext {
    pub fn new(dialogue_id: &str) -> Self {
        DialogueContext {
            dialogue_id: dialogue_id.to_string(),
            turn_index: 0,
            services: BTreeMap::new(),
            service_order: Vec::new(),
            sys_uttr_slot_value: BTreeMap::new(),
            last_system_actions: Vec::new(),
            last_system_utterance: String::new(),
        }
    }

    fn touch(&mut self, service: &str) -> &mut ServiceHistory {
        if !self.services.contains_key(service) {
            self.service_order.push(service.to_string());
        }
        self.services.entry(service.to_string()).or_default()
    }

    pub fn history(&self, service: &str) -> Option<&ServiceHistory> {
        self.services.get(service)
    }

    pub fn prev_intent(&self, service: &str) -> &str {
        self.history(service).map(|h| h.prev_intent()).unwrap_or(NONE_INTENT)
    }

    pub fn prev_usr_slot_value(&self, service: &str, slot: &str) -> Option<&str> {
        self.history(service).and_then(|h| h.prev_usr_slot_value(slot))
    }

    pub fn prev_sys_slot_value(&self, service: &str, slot: &str) -> Option<&str> {
        self.history(service)
            .and_then(|h| h.prev_sys_slot_value.get(slot))
            .map(String::as_str)
    }

    pub fn sys_uttr_slot_value(&self, service: &str, slot: &str) -> Option<&str> {
        self.sys_uttr_slot_value
            .get(&(service.to_string(), slot.to_string()))
            .map(String::as_str)
    }

    /// The state the context currently believes for `service`.
    pub fn previous_state(&self, service: &str) -> DialogueState {
        self.history(service)
            .and_then(|h| h.last_state.clone())
            .unwrap_or_else(DialogueState::empty)
    }

    pub fn previous_states(&self) -> BTreeMap<String, DialogueState> {
        self.services
            .iter()
            .filter_map(|(k, h)| h.last_state.clone().map(|s| (k.clone(), s)))
            .collect()
    }

    pub fn system_actions_for(&self, service: &str) -> &[Action] {
        self.last_system_actions
            .iter()
            .find(|(s, _)| s == service)
            .map(|(_, a)| a.as_slice())
            .unwrap_or(&[])
    }

    pub fn observe_system_turn(&mut self, turn: &Turn) {
        debug_assert_eq!(turn.speaker, Speaker::System);
        let folded = std::mem::take(&mut self.sys_uttr_slot_value);
        for ((service, slot), value) in folded {
            self.touch(&service).prev_sys_slot_value.insert(slot, value);
        }
        self.last_system_actions.clear();
        for frame in &turn.frames {
            self.touch(&frame.service);
            for action in &frame.actions {
                if let Some(v) = action.single_value() {
                    self.sys_uttr_slot_value
                        .insert((frame.service.clone(), action.slot.clone()), v.to_string());
                }
            }
            self.last_system_actions
                .push((frame.service.clone(), frame.actions.clone()));
        }
        self.last_system_utterance = turn.utterance.clone();
    }

    /// Advances past a user turn with the given (gold or predicted) states.
    pub fn observe_user_turn(&mut self, schema: &Schema, states: &BTreeMap<String, DialogueState>) -> Result<()> {
        for service in states.keys() {
            schema.service(service)?;
        }
        for (name, hist) in self.services.iter_mut() {
            hist.in_previous_state = states.contains_key(name);
        }
        for (service, state) in states {
            let hist = self.touch(service);
            hist.last_state = Some(state.clone());
            hist.seen_before = true;
            hist.in_previous_state = true;
        }
        self.turn_index += 1;
        Ok(())
    }

    /// `S_prev` for `active_service`: slots of every other visited service with
    /// a known value, preferring what the user said over what the system said.
    pub fn compute_s_prev(&self, schema: &Schema, active_service: &str) -> Vec<PrevSlotEntry> {
        let mut out = Vec::new();
        for service in &self.service_order {
            if service == active_service {
                continue;
            }
            let (Some(hist), Ok(svc)) = (self.services.get(service), schema.service(service)) else {
                continue;
            };
            for slot in &svc.slots {
                let entry = match (
                    hist.prev_usr_slot_value(&slot.name),
                    hist.prev_sys_slot_value.get(&slot.name),
                ) {
                    (Some(v), _) if !v.is_empty() => Some((v.to_string(), ValueSource::UserHistory)),
                    (_, Some(v)) if !v.is_empty() => Some((v.clone(), ValueSource::SystemHistory)),
                    _ => None,
                };
                if let Some((value, source)) = entry {
                    out.push(PrevSlotEntry {
                        service: service.clone(),
                        slot: slot.name.clone(),
                        value,
                        source,
                    });
                }
            }
        }
        out
    }

    pub fn binary_features(&self, service: &Service, slot: &Slot) -> BinaryFeatures {
        let hist = self.services.get(&service.name);
        let seen = hist.is_some_and(|h| h.seen_before);
        let in_prev = hist.is_some_and(|h| h.in_previous_state);
        BinaryFeatures([
            !seen,
            !in_prev,
            self.sys_uttr_slot_value(&service.name, &slot.name).is_some(),
            self.prev_sys_slot_value(&service.name, &slot.name).is_some(),
            service.is_required_somewhere(&slot.name),
            service.is_optional_everywhere(&slot.name),
        ])
    }
}

/// Services of a user turn whose gold state differs from their previous state.
pub fn involved_services(turn_frames: &[Frame], previous_states: &BTreeMap<String, DialogueState>) -> BTreeSet<String> {
    let empty = DialogueState::empty();
    turn_frames
        .iter()
        .filter_map(|f| {
            let state = f.state.as_ref()?;
            let prev = previous_states.get(&f.service).unwrap_or(&empty);
            (state != prev).then(|| f.service.clone())
        })
        .collect()
}
