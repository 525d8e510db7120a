//! SGD-format schema and dialogue ingestion.
//!
//! The on-disk layout is the published one: a `schema.json` array of services
//! and a directory of `dialogues_NNN.json` arrays. Everything is validated on
//! load and immutable afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

/// Reserved name of the synthetic inactive intent; always index 0 of a service.
pub const NONE_INTENT: &str = "NONE";
/// Literal value the corpus uses for "user has no preference".
pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub is_categorical: bool,
    #[serde(default)]
    pub possible_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intent {
    pub name: String,
    pub description: String,
    pub required_slots: BTreeSet<String>,
    pub optional_slots: BTreeSet<String>,
}

impl Intent {
    pub fn none() -> Self {
        Intent {
            name: NONE_INTENT.to_string(),
            description: String::new(),
            required_slots: BTreeSet::new(),
            optional_slots: BTreeSet::new(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.name == NONE_INTENT
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Service {
    pub name: String,
    pub description: String,
    /// `I(n)`, with the NONE intent at index 0.
    pub intents: Vec<Intent>,
    /// `S(n)` in schema order.
    pub slots: Vec<Slot>,
}

impl Service {
    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn intent_index(&self, name: &str) -> Option<usize> {
        self.intents.iter().position(|i| i.name == name)
    }

    /// Declared intents, without the synthetic NONE.
    pub fn real_intents(&self) -> impl Iterator<Item = &Intent> {
        self.intents.iter().filter(|i| !i.is_none())
    }

    pub fn is_informable(&self, slot: &str) -> bool {
        self.real_intents()
            .any(|i| i.required_slots.contains(slot) || i.optional_slots.contains(slot))
    }

    pub fn is_required_somewhere(&self, slot: &str) -> bool {
        self.real_intents().any(|i| i.required_slots.contains(slot))
    }

    /// True when every declared intent lists the slot as optional. A service
    /// without declared intents yields false.
    pub fn is_optional_everywhere(&self, slot: &str) -> bool {
        let mut any = false;
        for intent in self.real_intents() {
            if !intent.optional_slots.contains(slot) {
                return false;
            }
            any = true;
        }
        any
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| s.is_categorical)
    }

    pub fn non_categorical_slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| !s.is_categorical)
    }
}

/// `S_inf(n)`: slots that are required or optional in at least one intent,
/// in schema order.
pub fn informable_slots(service: &Service) -> Vec<String> {
    service
        .slots
        .iter()
        .filter(|s| service.is_informable(&s.name))
        .map(|s| s.name.clone())
        .collect()
}

/// Turns schema identifiers into plain lowercase words: underscores become
/// spaces and CamelCase boundaries are split.
pub fn normalize_name(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len() + 4);
    for (i, &ch) in chars.iter().enumerate() {
        if ch == '_' || ch.is_whitespace() {
            out.push(' ');
            continue;
        }
        if ch.is_uppercase() && i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(' ');
            }
        }
        out.extend(ch.to_lowercase());
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub services: BTreeMap<String, Service>,
}

impl Schema {
    pub fn service(&self, name: &str) -> Result<&Service> {
        self.services
            .get(name)
            .ok_or_else(|| DstError::UnknownService(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    /// Union of several split schemas. Identical duplicates are accepted;
    /// conflicting definitions of the same service are an error.
    pub fn merge<'a>(schemas: impl IntoIterator<Item = &'a Schema>) -> Result<Schema> {
        let mut services = BTreeMap::new();
        for schema in schemas {
            for (name, svc) in &schema.services {
                match services.get(name) {
                    Some(existing) if existing != svc => {
                        return Err(DstError::Validation(format!(
                            "service `{name}` defined differently across schemas"
                        )))
                    }
                    Some(_) => {}
                    None => {
                        services.insert(name.clone(), svc.clone());
                    }
                }
            }
        }
        Ok(Schema { services })
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Schema> {
        let raw: Vec<RawService> = serde_json::from_str(text).map_err(|e| DstError::parse(origin, &e))?;
        let mut services = BTreeMap::new();
        for r in raw {
            let svc = r.into_service()?;
            if services.contains_key(&svc.name) {
                return Err(DstError::Validation(format!("duplicate service name `{}`", svc.name)));
            }
            services.insert(svc.name.clone(), svc);
        }
        Ok(Schema { services })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let raw: Vec<RawService> = self.services.values().map(RawService::from).collect();
        Ok(serde_json::to_string_pretty(&raw)?)
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Schema::from_json_str(&text, path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawIntent {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    required_slots: Vec<String>,
    #[serde(default)]
    optional_slots: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawService {
    service_name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    slots: Vec<Slot>,
    #[serde(default)]
    intents: Vec<RawIntent>,
}

impl RawService {
    fn into_service(self) -> Result<Service> {
        let name = self.service_name;
        let mut slot_names = BTreeSet::new();
        for slot in &self.slots {
            if !slot_names.insert(slot.name.clone()) {
                return Err(DstError::Validation(format!(
                    "service `{name}`: duplicate slot `{}`",
                    slot.name
                )));
            }
            if slot.is_categorical == slot.possible_values.is_empty() {
                return Err(DstError::Validation(format!(
                    "service `{name}`: slot `{}` is_categorical={} but has {} possible values",
                    slot.name,
                    slot.is_categorical,
                    slot.possible_values.len()
                )));
            }
        }
        let mut intents = vec![Intent::none()];
        for ri in self.intents {
            if ri.name == NONE_INTENT {
                return Err(DstError::Validation(format!(
                    "service `{name}`: intent name `{NONE_INTENT}` is reserved"
                )));
            }
            let required: BTreeSet<String> = ri.required_slots.into_iter().collect();
            let optional: BTreeSet<String> = ri.optional_slots.into_keys().collect();
            for s in required.iter().chain(optional.iter()) {
                if !slot_names.contains(s) {
                    return Err(DstError::Validation(format!(
                        "service `{name}`: intent `{}` references undeclared slot `{s}`",
                        ri.name
                    )));
                }
            }
            if let Some(s) = required.intersection(&optional).next() {
                return Err(DstError::Validation(format!(
                    "service `{name}`: intent `{}` lists slot `{s}` as both required and optional",
                    ri.name
                )));
            }
            if intents.iter().any(|i: &Intent| i.name == ri.name) {
                return Err(DstError::Validation(format!(
                    "service `{name}`: duplicate intent `{}`",
                    ri.name
                )));
            }
            intents.push(Intent {
                name: ri.name,
                description: ri.description,
                required_slots: required,
                optional_slots: optional,
            });
        }
        Ok(Service {
            name,
            description: self.description,
            intents,
            slots: self.slots,
        })
    }
}

impl From<&Service> for RawService {
    fn from(svc: &Service) -> Self {
        RawService {
            service_name: svc.name.clone(),
            description: svc.description.clone(),
            slots: svc.slots.clone(),
            intents: svc
                .real_intents()
                .map(|i| RawIntent {
                    name: i.name.clone(),
                    description: i.description.clone(),
                    required_slots: i.required_slots.iter().cloned().collect(),
                    optional_slots: i
                        .optional_slots
                        .iter()
                        .map(|s| (s.clone(), DONTCARE.to_string()))
                        .collect(),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Dialogues
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub act: String,
    #[serde(default)]
    pub slot: String,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub canonical_values: Vec<String>,
}

impl Action {
    pub fn new(act: &str, slot: &str, values: &[&str]) -> Self {
        Action {
            act: act.to_string(),
            slot: slot.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
            canonical_values: Vec::new(),
        }
    }

    /// The single value this action assigns to its slot, if it carries exactly one.
    pub fn single_value(&self) -> Option<&str> {
        match (self.slot.is_empty(), self.values.as_slice()) {
            (false, [v]) if self.slot != "intent" => Some(v.as_str()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot: String,
    pub start: usize,
    pub exclusive_end: usize,
}

/// Per-service dialogue state at a user turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub active_intent: String,
    pub requested_slots: BTreeSet<String>,
    pub slot_values: BTreeMap<String, String>,
}

impl DialogueState {
    pub fn empty() -> Self {
        DialogueState {
            active_intent: NONE_INTENT.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub service: String,
    pub actions: Vec<Action>,
    pub state: Option<DialogueState>,
    /// Every acceptable surface form per slot in the gold state (first one is
    /// the canonical value stored in `state`).
    pub value_variants: BTreeMap<String, Vec<String>>,
    pub slot_spans: Vec<SlotSpan>,
}

impl Frame {
    pub fn variants(&self, slot: &str) -> Vec<String> {
        if let Some(v) = self.value_variants.get(slot) {
            return v.clone();
        }
        self.state
            .as_ref()
            .and_then(|s| s.slot_values.get(slot))
            .map(|v| vec![v.clone()])
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    pub frames: Vec<Frame>,
}

impl Turn {
    pub fn frame(&self, service: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.service == service)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub services: Vec<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Copy with every piece of user-side gold annotation removed (states,
    /// user actions, spans). Frame service names stay, since they only say
    /// which services the turn touches.
    pub fn redacted(&self) -> Dialogue {
        let mut out = self.clone();
        for turn in &mut out.turns {
            if turn.speaker == Speaker::User {
                for f in &mut turn.frames {
                    f.state = None;
                    f.actions.clear();
                    f.slot_spans.clear();
                    f.value_variants.clear();
                }
            }
        }
        out
    }

    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::User).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawState {
    active_intent: String,
    #[serde(default)]
    requested_slots: Vec<String>,
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawFrame {
    service: String,
    #[serde(default)]
    slots: Vec<SlotSpan>,
    #[serde(default)]
    actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<RawState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTurn {
    speaker: Speaker,
    utterance: String,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    services: Vec<String>,
    turns: Vec<RawTurn>,
}

impl From<RawFrame> for Frame {
    fn from(r: RawFrame) -> Self {
        let mut value_variants = BTreeMap::new();
        let state = r.state.map(|s| {
            let mut slot_values = BTreeMap::new();
            for (slot, values) in s.slot_values {
                if let Some(first) = values.first() {
                    slot_values.insert(slot.clone(), first.clone());
                    value_variants.insert(slot, values);
                }
            }
            DialogueState {
                active_intent: s.active_intent,
                requested_slots: s.requested_slots.into_iter().collect(),
                slot_values,
            }
        });
        Frame {
            service: r.service,
            actions: r.actions,
            state,
            value_variants,
            slot_spans: r.slots,
        }
    }
}

impl From<&Frame> for RawFrame {
    fn from(f: &Frame) -> Self {
        RawFrame {
            service: f.service.clone(),
            slots: f.slot_spans.clone(),
            actions: f.actions.clone(),
            state: f.state.as_ref().map(|s| RawState {
                active_intent: s.active_intent.clone(),
                requested_slots: s.requested_slots.iter().cloned().collect(),
                slot_values: s.slot_values.keys().map(|k| (k.clone(), f.variants(k))).collect(),
            }),
        }
    }
}

impl From<RawDialogue> for Dialogue {
    fn from(r: RawDialogue) -> Self {
        Dialogue {
            dialogue_id: r.dialogue_id,
            services: r.services,
            turns: r
                .turns
                .into_iter()
                .map(|t| Turn {
                    speaker: t.speaker,
                    utterance: t.utterance,
                    frames: t.frames.into_iter().map(Frame::from).collect(),
                })
                .collect(),
        }
    }
}

impl From<&Dialogue> for RawDialogue {
    fn from(d: &Dialogue) -> Self {
        RawDialogue {
            dialogue_id: d.dialogue_id.clone(),
            services: d.services.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| RawTurn {
                    speaker: t.speaker,
                    utterance: t.utterance.clone(),
                    frames: t.frames.iter().map(RawFrame::from).collect(),
                })
                .collect(),
        }
    }
}

/// Serializes dialogues in the corpus file layout.
pub fn dialogues_to_json(dialogues: &[Dialogue]) -> Result<String> {
    let raw: Vec<RawDialogue> = dialogues.iter().map(RawDialogue::from).collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}

pub fn dialogues_from_json(text: &str, origin: &Path, schema: &Schema) -> Result<Vec<Dialogue>> {
    let raw: Vec<RawDialogue> = serde_json::from_str(text).map_err(|e| DstError::parse(origin, &e))?;
    let dialogues: Vec<Dialogue> = raw.into_iter().map(Dialogue::from).collect();
    for d in &dialogues {
        validate_dialogue(d, schema)?;
    }
    Ok(dialogues)
}

/// Loads every `dialogues_*.json` in `dir`, ordered by filename then position.
pub fn load_dialogues(dir: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Dialogue>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("dialogues"))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for file in files {
        let text = fs::read_to_string(&file)?;
        out.extend(dialogues_from_json(&text, &file, schema)?);
    }
    Ok(out)
}

pub fn validate_dialogue(d: &Dialogue, schema: &Schema) -> Result<()> {
    let ctx = |msg: String| DstError::Validation(format!("dialogue {}: {msg}", d.dialogue_id));
    for svc in &d.services {
        schema
            .service(svc)
            .map_err(|_| ctx(format!("unknown service `{svc}`")))?;
    }
    for (i, turn) in d.turns.iter().enumerate() {
        if i > 0 && d.turns[i - 1].speaker == turn.speaker {
            return Err(ctx(format!("turn {i}: speakers do not alternate")));
        }
        for frame in &turn.frames {
            if !d.services.contains(&frame.service) {
                return Err(ctx(format!(
                    "turn {i}: frame service `{}` not listed in dialogue services",
                    frame.service
                )));
            }
            let svc = schema
                .service(&frame.service)
                .map_err(|_| ctx(format!("unknown service `{}`", frame.service)))?;
            for a in &frame.actions {
                if !a.slot.is_empty() && a.slot != "intent" && svc.slot(&a.slot).is_none() {
                    return Err(ctx(format!(
                        "turn {i}: action {} names unknown slot `{}` of `{}`",
                        a.act, a.slot, svc.name
                    )));
                }
            }
            for span in &frame.slot_spans {
                if svc.slot(&span.slot).is_none() {
                    return Err(ctx(format!("turn {i}: span on unknown slot `{}`", span.slot)));
                }
                if span.start > span.exclusive_end || span.exclusive_end > turn.utterance.chars().count() {
                    return Err(ctx(format!("turn {i}: span for `{}` out of range", span.slot)));
                }
            }
            match (turn.speaker, &frame.state) {
                (Speaker::User, None) => {
                    return Err(ctx(format!("turn {i}: user frame without state")));
                }
                (Speaker::User, Some(state)) => {
                    validate_state(state, frame, svc).map_err(|m| ctx(format!("turn {i}: {m}")))?
                }
                (Speaker::System, _) => {}
            }
        }
    }
    Ok(())
}

fn validate_state(state: &DialogueState, frame: &Frame, svc: &Service) -> std::result::Result<(), String> {
    if svc.intent_index(&state.active_intent).is_none() {
        return Err(format!(
            "unknown intent `{}` for service `{}`",
            state.active_intent, svc.name
        ));
    }
    for r in &state.requested_slots {
        if svc.slot(r).is_none() {
            return Err(format!("requested unknown slot `{r}` of `{}`", svc.name));
        }
    }
    for (slot, value) in &state.slot_values {
        let Some(def) = svc.slot(slot) else {
            return Err(format!("value for unknown slot `{slot}` of `{}`", svc.name));
        };
        if def.is_categorical {
            for v in frame.variants(slot).iter().chain(std::iter::once(value)) {
                if v != DONTCARE && !def.possible_values.contains(v) {
                    return Err(format!(
                        "categorical slot `{slot}` of `{}` has value `{v}` outside its value set",
                        svc.name
                    ));
                }
            }
        }
        if !svc.is_informable(slot) {
            log::debug!("{}: state assigns non-informable slot `{slot}`", svc.name);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_name("party_size"), "party size");
        assert_eq!(normalize_name("FindRestaurants"), "find restaurants");
        assert_eq!(normalize_name("number_of_seats"), "number of seats");
        assert_eq!(normalize_name("Restaurants_2"), "restaurants 2");
        assert_eq!(normalize_name("HTTPServer"), "http server");
    }

    fn schema_text(intents: &str, slots: &str) -> String {
        format!(r#"[{{"service_name": "Svc_1", "description": "d", "slots": [{slots}], "intents": [{intents}]}}]"#)
    }

    #[test]
    fn zero_slot_service() {
        let text = schema_text(r#"{"name": "Greet", "required_slots": [], "optional_slots": {}}"#, "");
        let s = Schema::from_json_str(&text, Path::new("mem")).unwrap();
        let svc = s.service("Svc_1").unwrap();
        assert!(svc.slots.is_empty());
        let names: Vec<_> = svc.intents.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, vec!["NONE", "Greet"]);
    }

    #[test]
    fn undeclared_required_slot_is_named() {
        let text = schema_text(
            r#"{"name": "Find", "required_slots": ["ghost"], "optional_slots": {}}"#,
            r#"{"name": "city", "is_categorical": false, "possible_values": []}"#,
        );
        let err = Schema::from_json_str(&text, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = Schema::from_json_str("[{\"service_name\": ", Path::new("bad.json")).unwrap_err();
        match err {
            DstError::Parse { path, line, .. } => {
                assert_eq!(path, Path::new("bad.json"));
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn informable_definition() {
        let text = schema_text(
            r#"{"name": "A", "required_slots": ["city"], "optional_slots": {}},
               {"name": "B", "required_slots": [], "optional_slots": {"date": "dontcare"}},
               {"name": "C", "required_slots": ["city"], "optional_slots": {}}"#,
            r#"{"name": "city", "is_categorical": false},
               {"name": "price", "is_categorical": false},
               {"name": "date", "is_categorical": false}"#,
        );
        let s = Schema::from_json_str(&text, Path::new("mem")).unwrap();
        let svc = s.service("Svc_1").unwrap();
        assert_eq!(informable_slots(svc), vec!["city", "date"]);
        assert!(svc.is_required_somewhere("city"));
        assert!(!svc.is_optional_everywhere("date"));
    }

    #[test]
    fn categorical_flag_must_match_values() {
        let text = schema_text(
            "",
            r#"{"name": "seats", "is_categorical": true, "possible_values": []}"#,
        );
        assert!(Schema::from_json_str(&text, Path::new("mem")).is_err());
    }

    #[test]
    fn single_value_rule() {
        assert_eq!(
            Action::new("OFFER", "restaurant_name", &["World Gourmet"]).single_value(),
            Some("World Gourmet")
        );
        assert_eq!(Action::new("OFFER", "time", &["6 pm", "7 pm"]).single_value(), None);
        assert_eq!(Action::new("REQUEST", "city", &[]).single_value(), None);
        assert_eq!(
            Action::new("INFORM_INTENT", "intent", &["FindRestaurants"]).single_value(),
            None
        );
    }
}
