//! Hand-built metric fixtures and a random fixture generator.

use std::collections::BTreeMap;

use dst_core::corpus::{DialogueState, Intent, Schema, Service, Slot};
use dst_core::evaluation::{score_frame, FrameKey, GoldFrame, TurnScore};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const SVC: &str = "Food_1";
pub const WIDE: &str = "Wide_1";

fn slot(name: &str, values: &[&str]) -> Slot {
    Slot {
        name: name.into(),
        description: String::new(),
        is_categorical: !values.is_empty(),
        possible_values: values.iter().map(|v| v.to_string()).collect(),
    }
}

fn intent(name: &str) -> Intent {
    Intent {
        name: name.into(),
        ..Intent::none()
    }
}

pub fn schema() -> Schema {
    let food = Service {
        name: SVC.into(),
        description: String::new(),
        intents: vec![Intent::none(), intent("Find"), intent("Reserve")],
        slots: vec![
            slot("city", &[]),
            slot("cuisine", &["italian", "indian", "dontcare"]),
            slot("time", &[]),
            slot("name", &[]),
            slot("seats", &["1", "2", "3", "4"]),
        ],
    };
    let wide = Service {
        name: WIDE.into(),
        description: String::new(),
        intents: vec![Intent::none(), intent("Go")],
        slots: (0..10).map(|i| slot(&format!("s{i}"), &[])).collect(),
    };
    Schema {
        services: [(SVC.to_string(), food), (WIDE.to_string(), wide)].into(),
    }
}

pub fn state(intent: &str, requested: &[&str], values: &[(&str, &str)]) -> DialogueState {
    DialogueState {
        active_intent: intent.into(),
        requested_slots: requested.iter().map(|s| s.to_string()).collect(),
        slot_values: values.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    }
}

pub fn gold(service: &str, turn: usize, state: DialogueState) -> GoldFrame {
    GoldFrame {
        key: FrameKey {
            dialogue_id: "fx".into(),
            turn_index: turn,
            service: service.into(),
        },
        state,
        variants: BTreeMap::new(),
    }
}

pub fn score(pairs: &[(GoldFrame, DialogueState)]) -> Vec<TurnScore> {
    let schema = schema();
    pairs.iter().map(|(g, p)| score_frame(g, p, &schema).unwrap()).collect()
}

/// Four frames. By hand:
/// 1. all right.
/// 2. "San Fransisco" scores 92 < 95, so 2 of 3 slots; wrong intent.
/// 3. empty gold, empty prediction.
/// 4. "Taqueria Lolita" scores 97; requested {city} against {city, time}.
///
/// JGA 3/4, Avg GA (1 + 2/3 + 1) / 3 = 8/9, intent 3/4,
/// requested F1 (1 + 1 + 1 + 2/3) / 4 = 11/12.
pub fn fixture_a() -> Vec<(GoldFrame, DialogueState)> {
    vec![
        (
            gold(
                SVC,
                0,
                state("Find", &[], &[("city", "San Jose"), ("cuisine", "italian")]),
            ),
            state("Find", &[], &[("city", "san jose"), ("cuisine", "italian")]),
        ),
        (
            gold(
                SVC,
                2,
                state(
                    "Reserve",
                    &["name"],
                    &[("city", "San Francisco"), ("cuisine", "indian"), ("time", "6 pm")],
                ),
            ),
            state(
                "Find",
                &["name"],
                &[("city", "San Fransisco"), ("cuisine", "indian"), ("time", "6 pm")],
            ),
        ),
        (gold(SVC, 4, state("NONE", &[], &[])), state("NONE", &[], &[])),
        (
            gold(
                SVC,
                6,
                state(
                    "Reserve",
                    &["city", "time"],
                    &[("name", "Taqueria Lolitas"), ("seats", "2")],
                ),
            ),
            state("Reserve", &["city"], &[("name", "Taqueria Lolita"), ("seats", "2")]),
        ),
    ]
}

/// Five frames. By hand:
/// 1. extra predicted slot: joint wrong, its one assigned slot right.
/// 2. missing predicted slot: 1 of 2.
/// 3. categorical compared exactly: "Italian" is wrong; NONE predicted.
/// 4. dontcare matches; disjoint requested sets.
/// 5. all right, both requested sets empty.
///
/// JGA 2/5, Avg GA (1 + 1/2 + 0 + 1 + 1) / 5 = 7/10, intent 4/5,
/// requested F1 (1 + 1 + 1 + 0 + 1) / 5 = 4/5.
pub fn fixture_b() -> Vec<(GoldFrame, DialogueState)> {
    vec![
        (
            gold(SVC, 0, state("Find", &[], &[("city", "Fremont")])),
            state("Find", &[], &[("city", "Fremont"), ("time", "noon")]),
        ),
        (
            gold(SVC, 2, state("Find", &[], &[("city", "Fremont"), ("seats", "3")])),
            state("Find", &[], &[("city", "Fremont")]),
        ),
        (
            gold(SVC, 4, state("Find", &["time"], &[("cuisine", "italian")])),
            state("NONE", &["time"], &[("cuisine", "Italian")]),
        ),
        (
            gold(SVC, 6, state("Find", &["city"], &[("cuisine", "dontcare")])),
            state("Find", &["time"], &[("cuisine", "dontcare")]),
        ),
        (
            gold(SVC, 8, state("Reserve", &[], &[("time", "6:30 pm")])),
            state("Reserve", &[], &[("time", "6 30 pm")]),
        ),
    ]
}

/// One frame of the wide service with ten assigned slots, nine right.
pub fn ten_slots() -> Vec<(GoldFrame, DialogueState)> {
    let values: Vec<(String, String)> = (0..10).map(|i| (format!("s{i}"), format!("value {i}"))).collect();
    let g: Vec<(&str, &str)> = values.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let mut p = g.clone();
    p[7].1 = "something else";
    vec![(gold(WIDE, 0, state("Go", &[], &g)), state("Go", &[], &p))]
}

/// Ten frames, seven with the right intent; one of the misses predicts NONE.
pub fn ten_intents() -> Vec<(GoldFrame, DialogueState)> {
    (0..10)
        .map(|t| {
            let g = state(if t % 2 == 0 { "Find" } else { "Reserve" }, &[], &[("city", "Fremont")]);
            let mut p = g.clone();
            match t {
                1 => p.active_intent = "Find".into(),
                4 => p.active_intent = "NONE".into(),
                8 => p.active_intent = "Reserve".into(),
                _ => {}
            }
            (gold(SVC, 2 * t, g), p)
        })
        .collect()
}

const CITIES: &[&str] = &["San Jose", "San Francisco", "Fremont", "Oakland"];
const TIMES: &[&str] = &["6 pm", "6:30 pm", "noon", "7:30 pm"];

fn random_value(rng: &mut impl Rng, slot: &Slot) -> String {
    if slot.is_categorical {
        slot.possible_values.choose(rng).unwrap().clone()
    } else if slot.name == "time" {
        TIMES.choose(rng).unwrap().to_string()
    } else {
        CITIES.choose(rng).unwrap().to_string()
    }
}

/// Up to five frames, each gold frame assigning at least one slot, with
/// predictions that copy, drop, alter or add values at random.
pub fn random_fixture(rng: &mut impl Rng) -> Vec<(GoldFrame, DialogueState)> {
    let schema = schema();
    let n = rng.random_range(1..=5);
    (0..n)
        .map(|t| {
            let svc = &schema.services[if rng.random_bool(0.8) { SVC } else { WIDE }];
            let k = rng.random_range(1..=svc.slots.len().min(4));
            let mut values = BTreeMap::new();
            while values.len() < k {
                let s = svc.slots.choose(rng).unwrap();
                values.insert(s.name.clone(), random_value(rng, s));
            }
            let g = DialogueState {
                active_intent: svc.intents.choose(rng).unwrap().name.clone(),
                requested_slots: svc
                    .slots
                    .iter()
                    .filter(|_| rng.random_bool(0.2))
                    .map(|s| s.name.clone())
                    .collect(),
                slot_values: values,
            };
            let mut p = g.clone();
            for s in &svc.slots {
                match rng.random_range(0..6) {
                    0 => {
                        p.slot_values.remove(&s.name);
                    }
                    1 => {
                        p.slot_values.insert(s.name.clone(), random_value(rng, s));
                    }
                    _ => {}
                }
                if rng.random_bool(0.1) && !p.requested_slots.remove(&s.name) {
                    p.requested_slots.insert(s.name.clone());
                }
            }
            if rng.random_bool(0.2) {
                p.active_intent = svc.intents.choose(rng).unwrap().name.clone();
            }
            (gold(&svc.name, 2 * t, g), p)
        })
        .collect()
}
