//! Train, predict, evaluate and inspect, driven by a [`RunConfig`].

pub mod config;
pub mod data;
pub mod predict;
pub mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Schema;
use crate::decoding::{DecodeDiagnostics, DecodeOptions};
use crate::encoding::{encode, render_debug};
use crate::error::{DstError, Result};
use crate::evaluation::{
    build_report, gold_frames, read_predictions, score_all, write_predictions, write_report_csv, MetricsReport,
    PredictionRecord,
};
use crate::labeling::LabelStats;
use crate::model::checkpoint;
use crate::scalar::Scalar;
use crate::tokenizer::{Tokenizer, Vocab};
use crate::util::write_atomic;

pub use config::RunConfig;
pub use data::{load_split, Split};
pub use predict::{run_dialogue, run_dialogues, ModelPredictor, OraclePredictor, Predictor};
pub use train::{train, TrainOptions, TrainOutcome};

/// Fails when a service present in both schemas is defined differently.
pub fn check_schema_compat(trained: &Schema, data: &Schema) -> Result<()> {
    for (name, svc) in &data.services {
        if let Some(t) = trained.services.get(name) {
            if t != svc {
                return Err(DstError::Validation(format!(
                    "service {name} differs between the checkpoint's training schema and the data"
                )));
            }
        }
    }
    Ok(())
}

fn trained_schema(meta: &BTreeMap<String, String>) -> Result<Option<Schema>> {
    meta.get("train_schema")
        .map(|t| Schema::from_json_str(t, Path::new("<checkpoint>")))
        .transpose()
}

/// Word vocabulary over one split, for runs without a checkpoint.
pub fn split_tokenizer(split: &Split) -> Tokenizer {
    let texts = data::vocab_texts(split);
    Tokenizer::new(Vocab::build(texts.iter().map(String::as_str), 1))
}

pub fn predictions_path(cfg: &RunConfig, split: &str, oracle: bool) -> PathBuf {
    let tag = if oracle { "oracle_" } else { "" };
    cfg.output_dir.join(format!("predictions_{tag}{split}.jsonl"))
}

/// Predicts a split with a checkpoint and writes the JSON-lines dump.
pub fn predict_split<F: Scalar>(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    split: &Split,
    out: &Path,
) -> Result<(Vec<PredictionRecord>, DecodeDiagnostics)> {
    let ck = checkpoint::load::<F>(checkpoint_path)?;
    if let Some(trained) = trained_schema(&ck.meta)? {
        check_schema_compat(&trained, &split.schema)?;
    }
    let predictor = ModelPredictor {
        model: &ck.model,
        tok: &ck.tokenizer,
        options: cfg.encoder_options(),
    };
    let (records, diag) = run_dialogues(
        &split.dialogues,
        &split.schema,
        &ck.tokenizer,
        &predictor,
        &cfg.decode_options()?,
    )?;
    write_predictions(out, &records)?;
    Ok((records, diag))
}

/// Oracle-decodes a split and writes the JSON-lines dump.
pub fn predict_oracle(
    split: &Split,
    options: &DecodeOptions,
    out: &Path,
) -> Result<(Vec<PredictionRecord>, DecodeDiagnostics)> {
    let tok = split_tokenizer(split);
    let predictor = OraclePredictor::new(&split.dialogues, &tok);
    let (records, diag) = run_dialogues(&split.dialogues, &split.schema, &tok, &predictor, options)?;
    write_predictions(out, &records)?;
    Ok((records, diag))
}

/// Seen services: those in the training schema.
pub fn seen_services(cfg: &RunConfig) -> BTreeSet<String> {
    let path = data::split_dir(&cfg.data_root, &cfg.train_split).join("schema.json");
    match crate::corpus::load_schema(&path) {
        Ok(s) => s.services.keys().cloned().collect(),
        Err(e) => {
            log::warn!("cannot read {}: {e}; every service counts as unseen", path.display());
            BTreeSet::new()
        }
    }
}

/// Scores a prediction dump against a split and writes `<stem>.report.json` and `.csv`.
pub fn evaluate_dump(predictions: &Path, split: &Split, seen: &BTreeSet<String>) -> Result<MetricsReport> {
    let preds = read_predictions(predictions)?;
    let scored = score_all(&gold_frames(&split.dialogues), &preds, &split.schema)?;
    let report = build_report(&scored, seen);
    let json = predictions.with_extension("report.json");
    write_atomic(&json, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_report_csv(predictions.with_extension("report.csv"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub split: String,
    pub frames: usize,
    pub joint_goal_accuracy: f64,
    pub changed_slots: usize,
    pub unresolvable_slots: usize,
    pub unresolvable_rate: f64,
    pub empty_carryover_source: usize,
    pub empty_span: usize,
}

pub const ORACLE_JGA_GATE: f64 = 0.99;
pub const UNRESOLVABLE_GATE: f64 = 0.02;

impl OracleReport {
    pub fn passes(&self) -> bool {
        self.joint_goal_accuracy >= ORACLE_JGA_GATE && self.unresolvable_rate < UNRESOLVABLE_GATE
    }
}

/// Label acquisition followed by oracle decoding over a whole split.
pub fn oracle_check(split: &Split) -> Result<OracleReport> {
    let tok = split_tokenizer(split);
    let (_, stats): (_, LabelStats) = data::gold_examples(split, &tok)?;
    let predictor = OraclePredictor::new(&split.dialogues, &tok);
    let (records, diag) = run_dialogues(
        &split.dialogues,
        &split.schema,
        &tok,
        &predictor,
        &DecodeOptions::default(),
    )?;
    let preds = records.into_iter().map(|r| (r.key(), r.state)).collect();
    let scored = score_all(&gold_frames(&split.dialogues), &preds, &split.schema)?;
    let m = crate::evaluation::aggregate(scored.iter().map(|(_, s)| s));
    Ok(OracleReport {
        split: split.name.clone(),
        frames: m.frames,
        joint_goal_accuracy: m.joint_goal_accuracy,
        changed_slots: stats.changed_slots,
        unresolvable_slots: stats.unresolvable_slots,
        unresolvable_rate: stats.unresolvable_rate(),
        empty_carryover_source: diag.empty_carryover_source,
        empty_span: diag.empty_span,
    })
}

/// Writes a text rendering of every encoded example plus a JSON-lines label dump.
pub fn dump_examples(cfg: &RunConfig, split: &Split, tok: &Tokenizer, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let (examples, _) = data::gold_examples(split, tok)?;
    let opts = cfg.encoder_options();
    let mut text = String::new();
    let mut labels = String::new();
    for ex in &examples {
        let service = split.schema.service(&ex.id.service)?;
        let enc = encode(&ex.snapshot, service, tok, &opts);
        text.push_str(&format!(
            "=== {}{}\n",
            ex.id,
            if enc.overflow { " (overflow)" } else { "" }
        ));
        text.push_str(&render_debug(&enc, tok));
        text.push('\n');
        labels.push_str(&serde_json::to_string(&serde_json::json!({
            "id": ex.id.to_string(),
            "labels": ex.labels,
        }))?);
        labels.push('\n');
    }
    let text_path = out_dir.join(format!("examples_{}.txt", split.name));
    let label_path = out_dir.join(format!("labels_{}.jsonl", split.name));
    write_atomic(&text_path, text.as_bytes())?;
    write_atomic(&label_path, labels.as_bytes())?;
    Ok((text_path, label_path))
}
