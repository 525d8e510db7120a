#![allow(dead_code)]

pub mod fixtures;
pub mod loss_oracle;

use std::path::PathBuf;

use dst_core::corpus::{Dialogue, Schema};
use dst_core::encoding::{EncodedInput, EncoderOptions};
use dst_core::labeling::{build_turn_examples, ContextMode, LabelStats, TurnExample};
use dst_core::pipeline::{split_tokenizer, Split};
use dst_core::tokenizer::Tokenizer;
use dst_core::toy;

pub fn split_of(name: &str, schema: Schema, dialogues: Vec<Dialogue>) -> Split {
    Split {
        name: name.into(),
        dir: PathBuf::new(),
        schema,
        dialogues,
    }
}

/// The scripted dialogue, a tokenizer over it and its gold examples.
pub fn worked() -> (Schema, Dialogue, Tokenizer, Vec<TurnExample>) {
    let schema = toy::eval_schema();
    let d = toy::worked_dialogue();
    let tok = split_tokenizer(&split_of("worked", schema.clone(), vec![d.clone()]));
    let ex = build_turn_examples(&d, &schema, &tok, ContextMode::Gold, &mut LabelStats::default()).unwrap();
    (schema, d, tok, ex)
}

/// A generated split with its tokenizer and gold examples.
pub fn generated(n: usize, seed: u64) -> (Split, Tokenizer, Vec<TurnExample>) {
    let split = split_of("gen", toy::eval_schema(), toy::generate("g", n, seed, 3));
    let tok = split_tokenizer(&split);
    let (ex, _) = dst_core::pipeline::data::gold_examples(&split, &tok).unwrap();
    (split, tok, ex)
}

pub fn plain() -> EncoderOptions {
    EncoderOptions {
        word_dropout_p: 0.0,
        schema_augment_p: 0.0,
        shuffle_schema: false,
        ..Default::default()
    }
}

pub fn words(enc: &EncodedInput, tok: &Tokenizer, range: std::ops::Range<usize>) -> Vec<String> {
    enc.token_ids[range]
        .iter()
        .map(|&id| tok.vocab().token(id).unwrap().to_string())
        .collect()
}

pub fn tiny_config() -> dst_core::model::ModelConfig {
    dst_core::model::ModelConfig {
        encoder: dst_core::model::EncoderSpec::tiny(2, 64, 2),
        head_dropout: 0.0,
        hidden_dropout: 0.0,
        ..Default::default()
    }
}

/// Deterministic encodings and aligned targets of every example.
pub fn encoded<F: dst_core::Scalar>(
    split: &Split,
    tok: &Tokenizer,
    ex: &[TurnExample],
) -> Vec<(EncodedInput, dst_core::model::TargetSet<F>)> {
    ex.iter()
        .map(|e| {
            let svc = split.schema.service(&e.id.service).unwrap();
            let enc = dst_core::encoding::encode(&e.snapshot, svc, tok, &plain());
            let t = dst_core::model::TargetSet::from_labels(e.labels.as_ref().unwrap(), svc, &enc.index_map).unwrap();
            (enc, t)
        })
        .collect()
}
