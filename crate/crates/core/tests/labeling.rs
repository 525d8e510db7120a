mod common;

use dst_core::corpus::Action;
use dst_core::decoding::{decode_turn, DecodeDiagnostics, DecodeInput, DecodeOptions, HeadProbs};
use dst_core::evaluation::{fuzzy_match_any, FUZZY_THRESHOLD};
use dst_core::labeling::{derive_slot_labels, CarryoverStatus, UserStatus};
use dst_core::toy;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn labels_are_consistent(seed in any::<u64>()) {
        let (split, _, ex) = common::generated(6, seed);
        for e in &ex {
            let svc = split.schema.service(&e.id.service).unwrap();
            let l = e.labels.as_ref().unwrap();
            let gold = e.gold_state.as_ref().unwrap();
            for s in &l.slots {
                let user = s.user_status.is_some_and(|u| u != UserStatus::None);
                let carry = s.carryover_status.is_some_and(|c| c != CarryoverStatus::None);
                prop_assert!(!(user && carry));
                prop_assert_eq!(s.unresolvable, s.user_status.is_none());
                if let Some((a, b)) = s.span {
                    prop_assert!(a <= b && b < e.user_tokens.len());
                    let text = &e.snapshot.user_utterance[e.user_tokens[a].0..e.user_tokens[b].1];
                    let variants = e.gold_variants.get(&s.slot).cloned().unwrap_or_else(|| vec![gold.slot_values[&s.slot].clone()]);
                    prop_assert!(fuzzy_match_any(text, &variants) >= FUZZY_THRESHOLD, "{} vs {:?}", text, variants);
                }
            }

            // Decoding the labels themselves gives back the gold state.
            if l.unresolvable_slots() == 0 {
                let probs = HeadProbs::from_labels(l, svc, e.snapshot.s_prev.len(), e.user_tokens.len());
                let input = DecodeInput { snapshot: &e.snapshot, service: svc, user_tokens: &e.user_tokens };
                let mut diag = DecodeDiagnostics::default();
                let got = decode_turn(&probs, &input, &DecodeOptions::default(), &mut diag);
                prop_assert_eq!(&got.active_intent, &gold.active_intent);
                prop_assert_eq!(&got.requested_slots, &gold.requested_slots);
                for (k, v) in &gold.slot_values {
                    let variants = e.gold_variants.get(k).cloned().unwrap_or_else(|| vec![v.clone()]);
                    prop_assert!(got.slot_values.get(k).is_some_and(|g| fuzzy_match_any(g, &variants) >= FUZZY_THRESHOLD), "{}", k);
                }
                prop_assert_eq!(got.slot_values.len(), gold.slot_values.len());
            }
        }
    }
}

#[test]
fn user_mention_beats_system_offer() {
    let (schema, d, tok, ex) = common::worked();
    let svc = schema.service(toy::RESTAURANTS).unwrap();
    let e = &ex[3];
    let mut frame = d.turns[e.id.turn_index].frame(toy::RESTAURANTS).unwrap().clone();
    frame
        .actions
        .push(Action::new("INFORM", "restaurant_name", &["World Gourmet"]));
    let mut snap = e.snapshot.clone();
    snap.user_utterance = "World Gourmet is good. A table for 4 at six in the evening.".into();
    let tokens = tok.tokenize(&snap.user_utterance);
    let labels = derive_slot_labels(&snap, &frame, svc, &tokens).unwrap();
    let name = labels.iter().find(|l| l.slot == "restaurant_name").unwrap();
    assert_eq!(name.user_status, Some(UserStatus::Active));
    assert_eq!(name.carryover_status, Some(CarryoverStatus::None));
    let (a, b) = name.span.unwrap();
    assert_eq!(&snap.user_utterance[tokens[a].start..tokens[b].end], "World Gourmet");

    // Without the user action the system offer is the source.
    frame.actions.pop();
    let labels = derive_slot_labels(&snap, &frame, svc, &tokens).unwrap();
    let name = labels.iter().find(|l| l.slot == "restaurant_name").unwrap();
    assert_eq!(name.carryover_status, Some(CarryoverStatus::InSysUttr));
}

#[test]
fn unchanged_slots_carry_no_source() {
    let (_, _, _, ex) = common::worked();
    // Turn 6 keeps the cuisine set at turn 4.
    let l = ex[3].labels.as_ref().unwrap();
    let cuisine = l.slots.iter().find(|s| s.slot == "cuisine").unwrap();
    assert_eq!(
        ex[3].snapshot.prev_state.slot_values.get("cuisine").map(String::as_str),
        Some("Indian")
    );
    assert_eq!(
        (cuisine.user_status, cuisine.carryover_status),
        (Some(UserStatus::None), Some(CarryoverStatus::None))
    );
}
