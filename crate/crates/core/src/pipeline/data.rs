use std::path::{Path, PathBuf};

use crate::corpus::{load_dialogues, load_schema, normalize_name, Dialogue, Schema, Speaker};
use crate::error::{DstError, Result};
use crate::labeling::{build_turn_examples, ContextMode, LabelStats, TurnExample};
use crate::model::pretrained;
use crate::pipeline::config::{EncoderKind, RunConfig};
use crate::tokenizer::{require_vocab_file, Tokenizer, Vocab};

/// One split directory: `schema.json` plus `dialogues_*.json`.
#[derive(Debug, Clone)]
pub struct Split {
    pub name: String,
    pub dir: PathBuf,
    pub schema: Schema,
    pub dialogues: Vec<Dialogue>,
}

pub fn split_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

pub fn load_split(root: &Path, name: &str) -> Result<Split> {
    let dir = split_dir(root, name);
    if !dir.is_dir() {
        return Err(DstError::Validation(format!(
            "split directory {} not found",
            dir.display()
        )));
    }
    let schema = load_schema(dir.join("schema.json"))?;
    let dialogues = load_dialogues(&dir, &schema)?;
    Ok(Split {
        name: name.to_string(),
        dir,
        schema,
        dialogues,
    })
}

/// Every text the tiny encoder's word vocabulary should cover.
pub fn vocab_texts(split: &Split) -> Vec<String> {
    let mut out = Vec::new();
    for service in split.schema.services.values() {
        out.push(normalize_name(&service.name));
        out.push(service.description.clone());
        for intent in &service.intents {
            out.push(normalize_name(&intent.name));
            out.push(intent.description.clone());
        }
        for slot in &service.slots {
            out.push(normalize_name(&slot.name));
            out.push(slot.description.clone());
            out.extend(slot.possible_values.iter().cloned());
        }
    }
    out.push("system".into());
    for d in &split.dialogues {
        for t in &d.turns {
            out.push(t.utterance.clone());
            if t.speaker == Speaker::System {
                for f in &t.frames {
                    for a in &f.actions {
                        out.push(normalize_name(&a.act));
                        out.extend(a.values.iter().cloned());
                    }
                }
            }
        }
    }
    out
}

/// Word vocabulary for a tiny encoder, or the checkpoint's word-piece vocabulary.
pub fn build_tokenizer(cfg: &RunConfig, train: &Split) -> Result<Tokenizer> {
    match cfg.encoder {
        EncoderKind::Tiny => {
            let texts = vocab_texts(train);
            Ok(Tokenizer::new(Vocab::build(
                texts.iter().map(String::as_str),
                cfg.vocab_min_count,
            )))
        }
        EncoderKind::Pretrained => Ok(Tokenizer::new(require_vocab_file(&cfg.pretrained_dir)?)),
    }
}

/// Labeled examples with the context advanced by gold states.
pub fn gold_examples(split: &Split, tok: &Tokenizer) -> Result<(Vec<TurnExample>, LabelStats)> {
    let mut stats = LabelStats::default();
    let mut out = Vec::new();
    for d in &split.dialogues {
        out.extend(build_turn_examples(
            d,
            &split.schema,
            tok,
            ContextMode::Gold,
            &mut stats,
        )?);
    }
    Ok((out, stats))
}

/// Re-exported so callers need not reach into the model module.
pub use pretrained::load as load_pretrained;

/// The leading dialogues of a split, cut after the user turn that yields the
/// `n`-th example. Holds more than `n` examples only when that turn has
/// several frames.
pub fn example_prefix(split: &Split, tok: &Tokenizer, n: usize) -> Result<Split> {
    let mut dialogues = Vec::new();
    let mut count = 0;
    let mut stats = LabelStats::default();
    for d in &split.dialogues {
        if count >= n {
            break;
        }
        let ex = build_turn_examples(d, &split.schema, tok, ContextMode::Gold, &mut stats)?;
        let mut d = d.clone();
        if count + ex.len() > n {
            let last = ex[n - count - 1].id.turn_index;
            d.turns.truncate(last + 1);
            count += ex.iter().filter(|e| e.id.turn_index <= last).count();
        } else {
            count += ex.len();
        }
        dialogues.push(d);
    }
    Ok(Split {
        name: split.name.clone(),
        dir: split.dir.clone(),
        schema: split.schema.clone(),
        dialogues,
    })
}
