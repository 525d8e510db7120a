mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use common::{encoded, generated, loss_oracle, plain, tiny_config};
use dst_core::context::{BinaryFeatures, PrevSlotEntry, ValueSource};
use dst_core::corpus::{DialogueState, Intent, Service, Slot};
use dst_core::encoding::{encode, EncodedInput, IndexMap};
use dst_core::error::DstError;
use dst_core::labeling::TurnSnapshot;
use dst_core::model::loss::compute_loss;
use dst_core::model::{checkpoint, pretrained, EncoderDims, EncoderSpec, LossWeights, Model, ModelConfig, ModelInput};
use dst_core::tokenizer::{Tokenizer, Vocab};
use dst_core::{HeadOutputs64, Model64, TargetSet64};
use ndarray::Array2;
use proptest::prelude::*;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny_bert");

fn slot(name: &str, values: usize) -> Slot {
    Slot {
        name: name.into(),
        description: String::new(),
        is_categorical: values > 0,
        possible_values: (1..=values).map(|v| v.to_string()).collect(),
    }
}

fn intent(name: &str, required: &[&str], optional: &[&str]) -> Intent {
    Intent {
        name: name.into(),
        description: String::new(),
        required_slots: required.iter().map(|s| s.to_string()).collect(),
        optional_slots: optional.iter().map(|s| s.to_string()).collect(),
    }
}

/// 4 intents; 9 slots of which 5 informable, 2 of those categorical with
/// 5 + 6 values; 12 user tokens; 3 earlier-service entries.
fn shape_case() -> (Service, TurnSnapshot, Tokenizer) {
    let service = Service {
        name: "Shape_1".into(),
        description: String::new(),
        intents: vec![
            Intent::none(),
            intent("A", &["a", "b"], &[]),
            intent("B", &[], &["c", "d"]),
            intent("C", &["e"], &["a"]),
        ],
        slots: vec![
            slot("a", 0),
            slot("b", 0),
            slot("c", 0),
            slot("d", 5),
            slot("e", 6),
            slot("f", 0),
            slot("g", 0),
            slot("h", 3),
            slot("i", 0),
        ],
    };
    let entry = |slot: &str| PrevSlotEntry {
        service: "Other_1".into(),
        slot: slot.into(),
        value: "x".into(),
        source: ValueSource::UserHistory,
    };
    let user = "one two three four five six seven eight nine ten eleven twelve";
    let snapshot = TurnSnapshot {
        service: service.name.clone(),
        system_utterance: String::new(),
        system_actions: vec![],
        user_utterance: user.into(),
        prev_state: DialogueState::empty(),
        sys_uttr_values: BTreeMap::new(),
        prev_sys_values: BTreeMap::new(),
        s_prev: vec![entry("p"), entry("q"), entry("r")],
        features: vec![BinaryFeatures::default(); 9],
    };
    let tok = Tokenizer::new(Vocab::build([user, "shape 1 a b c d e f g h i other x"], 1));
    (service, snapshot, tok)
}

fn tiny(vocab: usize, seed: u64) -> Model64 {
    Model::init_tiny(&tiny_config(), vocab, seed).unwrap()
}

#[test]
fn head_shapes_follow_the_index_map() {
    let (service, snap, tok) = shape_case();
    let enc = encode(&snap, &service, &tok, &plain());
    assert_eq!(enc.index_map.user_len, 12);
    let model = tiny(tok.vocab_size(), 1);
    let out = model
        .forward(&[ModelInput {
            input: &enc,
            features: &snap.features,
        }])
        .unwrap();
    let o = &out[0];
    assert_eq!(o.intent_status.dim(), (1, 2));
    assert_eq!(o.intent_value.dim(), (4, 1));
    assert_eq!(o.requested.dim(), (9, 1));
    assert_eq!(o.user_status.dim(), (5, 3));
    assert_eq!(o.carryover.dim(), (5, 4));
    assert_eq!(o.categorical.dim(), (11, 1));
    assert_eq!(o.start.dim(), (3, 12));
    assert_eq!(o.end.dim(), (3, 12));
    assert_eq!(o.cross.dim(), (5, 3));
}

#[test]
fn bad_inputs_are_errors() {
    let (service, snap, tok) = shape_case();
    let model = tiny(tok.vocab_size(), 1);
    let mut enc = encode(&snap, &service, &tok, &plain());
    let short = &snap.features[..8];
    assert!(matches!(
        model.forward(&[ModelInput {
            input: &enc,
            features: short
        }]),
        Err(DstError::Shape(_))
    ));
    assert!(matches!(model.forward(&[]), Err(DstError::Shape(_))));

    let mut far = enc.clone();
    far.index_map.slots[0] = far.token_ids.len();
    assert!(matches!(
        model.forward(&[ModelInput {
            input: &far,
            features: &snap.features
        }]),
        Err(DstError::Index(_))
    ));

    enc.attention_mask.iter_mut().for_each(|m| *m = 0);
    let err = model
        .forward(&[ModelInput {
            input: &enc,
            features: &snap.features,
        }])
        .unwrap_err();
    assert!(matches!(err, DstError::Shape(ref m) if m.contains("padding")), "{err}");
}

#[test]
fn identical_examples_give_identical_rows() {
    let (split, tok, ex) = generated(2, 4);
    let model = tiny(tok.vocab_size(), 3);
    let batch = encoded::<f64>(&split, &tok, &ex[..1]);
    let input = ModelInput {
        input: &batch[0].0,
        features: &ex[0].snapshot.features,
    };
    let out = model.forward(&[input, input]).unwrap();
    assert_eq!(out[0], out[1]);
    // Batch composition does not leak between examples.
    let other = encoded::<f64>(&split, &tok, &ex[1..2]);
    let mixed = model
        .forward(&[
            input,
            ModelInput {
                input: &other[0].0,
                features: &ex[1].snapshot.features,
            },
        ])
        .unwrap();
    assert_eq!(mixed[0], out[0]);
}

#[test]
fn same_seed_same_parameters() {
    let a = tiny(100, 11);
    let b = tiny(100, 11);
    let c = tiny(100, 12);
    assert_eq!(a.params.values, b.params.values);
    assert_ne!(a.params.values, c.params.values);
}

#[test]
fn base_encoder_parameter_count() {
    let n = EncoderDims::base_uncased().param_count();
    assert!((n as f64 - 110e6).abs() / 110e6 < 0.02, "{n}");
    // The closed form agrees with an allocated model.
    let dims = EncoderDims {
        vocab_size: 97,
        hidden: 24,
        layers: 3,
        heads: 4,
        intermediate: 40,
        max_position: 50,
        ..EncoderDims::base_uncased()
    };
    let m = Model64::from_dims(&tiny_config(), dims, 0).unwrap();
    assert_eq!(m.encoder_param_count(), dims.param_count());
}

#[derive(serde::Deserialize)]
struct Expected {
    cases: Vec<Case>,
    tokenization: Vec<Pieces>,
}

#[derive(serde::Deserialize)]
struct Case {
    input_ids: Vec<u32>,
    token_type_ids: Vec<u32>,
    attention_mask: Vec<u8>,
    hidden: Vec<Vec<f64>>,
}

#[derive(serde::Deserialize)]
struct Pieces {
    text: String,
    ids: Vec<u32>,
}

fn bare_input(c: &Case) -> EncodedInput {
    EncodedInput {
        token_ids: c.input_ids.clone(),
        segment_ids: c.token_type_ids.clone(),
        attention_mask: c.attention_mask.clone(),
        index_map: IndexMap {
            cls: 0,
            intents: vec![],
            slots: vec![],
            informable: vec![],
            categorical: vec![],
            noncategorical: vec![],
            values: vec![],
            prev: vec![],
            user_start: 1,
            user_len: 0,
            user_dropped: 0,
        },
        part_starts: [0; 6],
        overflow: false,
    }
}

#[test]
fn pretrained_import_matches_reference_encoder() {
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(Path::new(FIXTURE).join("expected.json")).unwrap()).unwrap();
    let config = ModelConfig {
        encoder: EncoderSpec::Pretrained { path: FIXTURE.into() },
        ..tiny_config()
    };
    let (model, tok) = pretrained::load::<f64>(Path::new(FIXTURE), &config, 0).unwrap();
    assert_eq!(model.dims.hidden, 16);
    // Marker tokens are appended after the 28 checkpoint entries.
    assert_eq!(tok.vocab_size(), 28 + 6);

    for case in &expected.cases {
        let h = model.hidden_states(&bare_input(case)).unwrap();
        for (t, row) in case.hidden.iter().enumerate() {
            if case.attention_mask[t] == 0 {
                continue;
            }
            for (k, want) in row.iter().enumerate() {
                assert!(
                    (h[[t, k]] - want).abs() < 1e-6,
                    "token {t} dim {k}: {} vs {want}",
                    h[[t, k]]
                );
            }
        }
    }
    for p in &expected.tokenization {
        assert_eq!(tok.ids(&p.text), p.ids, "{}", p.text);
    }
}

#[test]
fn missing_pretrained_files_explain_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig {
        encoder: EncoderSpec::Pretrained {
            path: dir.path().into(),
        },
        ..tiny_config()
    };
    for err in [
        pretrained::load::<f32>(&dir.path().join("absent"), &config, 0).unwrap_err(),
        pretrained::load::<f32>(dir.path(), &config, 0).unwrap_err(),
    ] {
        match err {
            DstError::MissingPretrained { hint, .. } => assert!(hint.contains("vocab.txt")),
            other => panic!("{other}"),
        }
    }
    std::fs::copy(Path::new(FIXTURE).join("vocab.txt"), dir.path().join("vocab.txt")).unwrap();
    match pretrained::load::<f32>(dir.path(), &config, 0).unwrap_err() {
        DstError::MissingPretrained { path, .. } => assert!(path.ends_with("config.json")),
        other => panic!("{other}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let (split, tok, ex) = generated(2, 8);
    let model = Model::<f32>::init_tiny(&tiny_config(), tok.vocab_size(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    let meta = BTreeMap::from([("note".to_string(), "x".to_string())]);
    checkpoint::save(&path, &model, &tok, None, 17, &meta).unwrap();
    let back = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(back.step, 17);
    assert_eq!(back.meta.get("note").map(String::as_str), Some("x"));
    assert_eq!(back.tokenizer.vocab().tokens(), tok.vocab().tokens());
    assert_eq!(back.model.params.values, model.params.values);
    let batch = encoded::<f32>(&split, &tok, &ex[..2]);
    let inputs: Vec<_> = batch
        .iter()
        .zip(&ex)
        .map(|((e, _), x)| ModelInput {
            input: e,
            features: &x.snapshot.features,
        })
        .collect();
    assert_eq!(back.model.forward(&inputs).unwrap(), model.forward(&inputs).unwrap());
}

fn outputs_and_targets(n: usize, seed: u64) -> (Vec<HeadOutputs64>, Vec<TargetSet64>) {
    let (split, tok, ex) = generated(3, seed);
    let model = tiny(tok.vocab_size(), seed);
    let batch = encoded::<f64>(&split, &tok, &ex[..n.min(ex.len())]);
    let inputs: Vec<_> = batch
        .iter()
        .zip(&ex)
        .map(|((e, _), x)| ModelInput {
            input: e,
            features: &x.snapshot.features,
        })
        .collect();
    (
        model.forward(&inputs).unwrap(),
        batch.into_iter().map(|(_, t)| t).collect(),
    )
}

/// Overwrites every logit that has no target with `value`.
fn poison_masked(o: &mut HeadOutputs64, t: &TargetSet64, value: f64) {
    fn rows(a: &mut Array2<f64>, t: &[Option<usize>], v: f64) {
        for (r, target) in t.iter().enumerate() {
            if target.is_none() {
                a.row_mut(r).fill(v);
            }
        }
    }
    fn elems(a: &mut Array2<f64>, t: &[Option<f64>], v: f64) {
        for (x, target) in a.iter_mut().zip(t) {
            if target.is_none() {
                *x = v;
            }
        }
    }
    rows(&mut o.intent_status, &t.intent_status, value);
    elems(&mut o.intent_value, &t.intent_value, value);
    elems(&mut o.requested, &t.requested, value);
    rows(&mut o.user_status, &t.user_status, value);
    rows(&mut o.carryover, &t.carryover, value);
    elems(&mut o.categorical, &t.categorical, value);
    rows(&mut o.start, &t.start, value);
    rows(&mut o.end, &t.end, value);
    elems(&mut o.cross, &t.cross, value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn masked_logits_do_not_matter(seed in 0u64..1000, value in -50.0f64..50.0) {
        let (out, targets) = outputs_and_targets(6, seed);
        let w = LossWeights::default();
        let base = compute_loss(&out, &targets, &w).unwrap();
        let mut poisoned = out.clone();
        for (o, t) in poisoned.iter_mut().zip(&targets) {
            poison_masked(o, t, value);
        }
        let after = compute_loss(&poisoned, &targets, &w).unwrap();
        prop_assert_eq!(base.heads, after.heads);
        prop_assert_eq!(base.total, after.total);
    }

    #[test]
    fn lambda3_scales_its_group_linearly(seed in 0u64..1000, l3 in 0.1f64..4.0) {
        let (out, targets) = outputs_and_targets(4, seed);
        let w = LossWeights { lambda3: l3, w4: 0.5, w8: 2.0, ..Default::default() };
        let twice = LossWeights { lambda3: 2.0 * l3, ..w };
        let a = compute_loss(&out, &targets, &w).unwrap();
        let b = compute_loss(&out, &targets, &twice).unwrap();
        let l12 = |x: &dst_core::model::LossBreakdown<f64>| w.lambda1 * (w.w1 * x.heads[0] + w.w2 * x.heads[1]) + w.lambda2 * x.heads[2];
        let (ga, gb) = (a.total - l12(&a), b.total - l12(&b));
        prop_assert!((gb - 2.0 * ga).abs() <= 1e-12 * gb.abs().max(1.0), "{} {}", ga, gb);
    }

    #[test]
    fn example_order_does_not_matter(seed in 0u64..1000) {
        let (mut out, mut targets) = outputs_and_targets(6, seed);
        let w = LossWeights::default();
        let a = compute_loss(&out, &targets, &w).unwrap();
        out.reverse();
        targets.reverse();
        let b = compute_loss(&out, &targets, &w).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }
}

#[test]
fn matches_the_oracle_and_special_weightings() {
    let (out, targets) = outputs_and_targets(6, 2);
    let w = LossWeights::default();
    let got = compute_loss(&out, &targets, &w).unwrap();
    let (want, means) = loss_oracle::loss(&out, &targets, &w);
    assert!((got.total - want).abs() <= 1e-9 * want);
    for (h, (g, m)) in got.heads.iter().zip(means).enumerate() {
        assert!((g - m).abs() <= 1e-9 * m.max(1e-12), "head {h}");
    }

    let zero = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        ..w
    };
    assert_eq!(compute_loss(&out, &targets, &zero).unwrap().total, 0.0);

    // One head switched on: the total is that head's mean cross-entropy.
    let only_carry = LossWeights {
        w1: 0.0,
        w2: 0.0,
        lambda2: 0.0,
        w3: 0.0,
        w5: 0.0,
        w6: 0.0,
        w7: 0.0,
        w8: 0.0,
        ..w
    };
    assert_eq!(compute_loss(&out, &targets, &only_carry).unwrap().total, got.heads[4]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let (out, mut targets) = outputs_and_targets(2, 3);
    targets[0].user_status.push(Some(0));
    assert!(matches!(
        compute_loss(&out, &targets, &LossWeights::default()),
        Err(DstError::Shape(_))
    ));
    assert!(compute_loss(&out, &targets[..1], &LossWeights::default()).is_err());
}

#[test]
fn every_head_is_supervised_somewhere() {
    let (_, targets) = outputs_and_targets(64, 21);
    let mut seen = BTreeSet::new();
    for t in &targets {
        for (h, n) in t.counts().iter().enumerate() {
            if *n > 0 {
                seen.insert(h);
            }
        }
    }
    assert_eq!(seen.len(), 9, "{seen:?}");
}
