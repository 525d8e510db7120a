use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Thesaurus;
use crate::encoding::{encode, encode_augmented, EncodedInput};
use crate::error::{DstError, Result};
use crate::evaluation::{aggregate, gold_frames, score_all, Metrics};
use crate::labeling::{LabelStats, TurnExample};
use crate::model::{checkpoint, LossBreakdown, Model, ModelInput, TargetSet, HEAD_NAMES};
use crate::optim::{self, AdamState};
use crate::pipeline::config::{EncoderKind, RunConfig};
use crate::pipeline::data::{build_tokenizer, gold_examples, load_split, Split};
use crate::pipeline::predict::{run_dialogues, ModelPredictor};
use crate::scalar::Scalar;
use crate::tokenizer::Tokenizer;

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const LOSS_LOG: &str = "loss.tsv";
pub const EVAL_LOG: &str = "eval.tsv";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: bool,
    /// Resume even when the stored config hash differs.
    pub force: bool,
    /// Stop (and checkpoint) after this many total steps, as if interrupted.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub total: f64,
    pub heads: [f64; 9],
    pub lr: f64,
    pub grad_norm: f64,
    pub examples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_dev_jga: Option<f64>,
    pub steps_done: u64,
    /// Steps run by this invocation.
    pub records: Vec<StepRecord>,
    pub label_stats: LabelStats,
    pub skipped_overflow: usize,
}

/// splitmix64 over three words.
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(c.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Example indices of batch `step`: consecutive slices of a per-epoch permutation.
pub fn batch_indices(n: usize, batch_size: usize, data_seed: u64, step: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|i| {
            let g = step * batch_size as u64 + i;
            let epoch = g / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(data_seed, epoch, 0)));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(g % n as u64) as usize]
        })
        .collect()
}

fn thesaurus(cfg: &RunConfig) -> Result<Thesaurus> {
    match &cfg.thesaurus_path {
        Some(p) => Thesaurus::builtin().with_file(p),
        None => Ok(Thesaurus::builtin()),
    }
}

/// Encoded inputs with their example index, aligned targets, and the number
/// of examples skipped for overflow.
pub type Batch<F> = (Vec<(EncodedInput, usize)>, Vec<TargetSet<F>>, usize);

/// Encoded inputs and targets of one training batch.
#[allow(clippy::too_many_arguments)]
pub fn prepare_batch<F: Scalar>(
    cfg: &RunConfig,
    split: &Split,
    tok: &Tokenizer,
    thesaurus: &Thesaurus,
    examples: &[TurnExample],
    indices: &[usize],
    step: u64,
    augment: bool,
) -> Result<Batch<F>> {
    let opts = cfg.encoder_options();
    let mut encoded = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    let mut skipped = 0;
    for (i, &ei) in indices.iter().enumerate() {
        let ex = &examples[ei];
        let service = split.schema.service(&ex.id.service)?;
        let enc = if augment {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.augment_seed(), step, i as u64 + 1));
            encode_augmented(&ex.snapshot, service, tok, &opts, thesaurus, &mut rng)
        } else {
            encode(&ex.snapshot, service, tok, &opts)
        };
        if enc.overflow {
            skipped += 1;
            log::debug!("{}: overflowing input skipped", ex.id);
            continue;
        }
        let labels = ex
            .labels
            .as_ref()
            .ok_or_else(|| DstError::Labeling(format!("{} has no labels", ex.id)))?;
        targets.push(TargetSet::from_labels(labels, service, &enc.index_map)?);
        encoded.push((enc, ei));
    }
    Ok((encoded, targets, skipped))
}

fn f64s<F: Scalar>(b: &LossBreakdown<F>) -> (f64, [f64; 9]) {
    (b.total.to_f64_lossy(), b.heads.map(|h| h.to_f64_lossy()))
}

/// Dev metrics with the context advanced by the model's own predictions.
pub fn evaluate_model<F: Scalar>(
    model: &Model<F>,
    tok: &Tokenizer,
    cfg: &RunConfig,
    split: &Split,
    limit: usize,
) -> Result<Metrics> {
    let dialogues = if limit == 0 || limit >= split.dialogues.len() {
        &split.dialogues[..]
    } else {
        &split.dialogues[..limit]
    };
    let predictor = ModelPredictor {
        model,
        tok,
        options: cfg.encoder_options(),
    };
    let (records, _) = run_dialogues(dialogues, &split.schema, tok, &predictor, &cfg.decode_options()?)?;
    let preds = records.into_iter().map(|r| (r.key(), r.state)).collect();
    let scored = score_all(&gold_frames(dialogues), &preds, &split.schema)?;
    Ok(aggregate(scored.iter().map(|(_, s)| s)))
}

struct State<F: Scalar> {
    model: Model<F>,
    tok: Tokenizer,
    opt: AdamState<F>,
    step: u64,
    best: Option<f64>,
}

fn meta(cfg: &RunConfig, train: &Split, best: Option<f64>) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    m.insert("config_hash".into(), cfg.training_hash());
    m.insert("run_config".into(), cfg.to_toml_string());
    m.insert("train_schema".into(), train.schema.to_json_string()?);
    if let Some(b) = best {
        m.insert("best_dev_jga".into(), format!("{b:.17}"));
    }
    Ok(m)
}

fn init_state<F: Scalar>(cfg: &RunConfig, train: &Split, out: &Path, opts: &TrainOptions) -> Result<State<F>> {
    let last = out.join(LAST_CHECKPOINT);
    if opts.resume && last.exists() {
        let ck = checkpoint::load::<F>(&last)?;
        let stored = ck.meta.get("config_hash").cloned().unwrap_or_default();
        if stored != cfg.training_hash() {
            if !opts.force {
                return Err(DstError::Config(format!(
                    "{} was written with a different configuration (hash {stored}); pass --force to resume anyway",
                    last.display()
                )));
            }
            log::warn!("resuming despite config hash mismatch");
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| DstError::Checkpoint(format!("{} has no optimizer state", last.display())))?;
        log::info!("resuming from step {}", ck.step);
        return Ok(State {
            best: ck.meta.get("best_dev_jga").and_then(|s| s.parse().ok()),
            model: ck.model,
            tok: ck.tokenizer,
            opt,
            step: ck.step,
        });
    }
    let mcfg = cfg.model_config();
    let (model, tok) = match cfg.encoder {
        EncoderKind::Tiny => {
            let tok = build_tokenizer(cfg, train)?;
            (Model::<F>::init_tiny(&mcfg, tok.vocab_size(), cfg.init_seed())?, tok)
        }
        EncoderKind::Pretrained => crate::model::pretrained::load::<F>(&cfg.pretrained_dir, &mcfg, cfg.init_seed())?,
    };
    let opt = AdamState::new(&model.params);
    Ok(State {
        model,
        tok,
        opt,
        step: 0,
        best: None,
    })
}

fn append(path: &Path, line: &str, header: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

/// Drops log rows past `step`, so a resumed run does not duplicate them.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, l)| {
            *i == 0
                || l.split('\t')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= step)
        })
        .map(|(_, l)| l)
        .collect();
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

/// Trains on the train split, evaluating on dev every `eval_every` steps.
pub fn train<F: Scalar>(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut train_split = load_split(&cfg.data_root, &cfg.train_split)?;
    if cfg.train_dialogues > 0 {
        train_split.dialogues.truncate(cfg.train_dialogues);
    }
    let dev = match load_split(&cfg.data_root, &cfg.dev_split) {
        Ok(d) => Some(d),
        Err(e) => {
            log::warn!("no dev evaluation: {e}");
            None
        }
    };
    let mut st = init_state::<F>(cfg, &train_split, &out, opts)?;
    let (examples, label_stats) = gold_examples(&train_split, &st.tok)?;
    if examples.is_empty() {
        return Err(DstError::Validation("training split yields no examples".into()));
    }
    log::info!(
        "{} training examples, {} changed slots, {:.3}% unresolvable",
        examples.len(),
        label_stats.changed_slots,
        100.0 * label_stats.unresolvable_rate()
    );
    let thesaurus = thesaurus(cfg)?;
    let weights = cfg.loss_weights();
    let ocfg = cfg.optimizer();
    let loss_log = out.join(LOSS_LOG);
    let eval_log = out.join(EVAL_LOG);
    truncate_log(&loss_log, st.step)?;
    truncate_log(&eval_log, st.step)?;
    let loss_header = format!("step\ttotal\t{}\tlr\tgrad_norm", HEAD_NAMES.join("\t"));

    let stop = opts.stop_after.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    let mut records = Vec::new();
    let mut skipped_overflow = 0;
    while st.step < stop {
        let step = st.step;
        let idx = batch_indices(examples.len(), cfg.batch_size, cfg.data_seed(), step);
        let (encoded, targets, skipped) =
            prepare_batch::<F>(cfg, &train_split, &st.tok, &thesaurus, &examples, &idx, step, true)?;
        skipped_overflow += skipped;
        let lr = ocfg.lr_at(st.opt.step);
        if encoded.is_empty() {
            st.step += 1;
            continue;
        }
        let inputs: Vec<ModelInput<'_>> = encoded
            .iter()
            .map(|(enc, ei)| ModelInput {
                input: enc,
                features: &examples[*ei].snapshot.features,
            })
            .collect();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(cfg.augment_seed(), step, 0));
        let (breakdown, grads) = st
            .model
            .loss_and_grads(&inputs, &targets, &weights, Some(&mut drop_rng))?;
        let grad_norm = optim::step(&mut st.model.params, &mut st.opt, &grads, &ocfg)?;
        st.step += 1;
        let (total, heads) = f64s(&breakdown);
        if !total.is_finite() {
            return Err(DstError::Validation(format!("loss became {total} at step {}", st.step)));
        }
        let rec = StepRecord {
            step: st.step,
            total,
            heads,
            lr,
            grad_norm,
            examples: inputs.len(),
        };
        if cfg.log_every > 0 && (st.step % cfg.log_every == 0 || st.step == 1) {
            let cols: Vec<String> = heads.iter().map(|h| format!("{h:.6}")).collect();
            append(
                &loss_log,
                &format!("{}\t{total:.6}\t{}\t{lr:.3e}\t{grad_norm:.4}", st.step, cols.join("\t")),
                &loss_header,
            )?;
            log::info!("step {} loss {total:.4} lr {lr:.2e}", st.step);
        }
        records.push(rec);

        let at_eval = st.step % cfg.eval_every == 0 || st.step == cfg.total_steps;
        if at_eval {
            if let Some(dev) = &dev {
                let m = evaluate_model(&st.model, &st.tok, cfg, dev, cfg.dev_dialogues)?;
                append(
                    &eval_log,
                    &format!(
                        "{}\t{:.6}\t{:.6}\t{:.6}",
                        st.step, m.joint_goal_accuracy, m.intent_accuracy, m.requested_slot_f1
                    ),
                    "step\tjga\tintent_acc\treq_f1",
                )?;
                log::info!("step {} dev JGA {:.4}", st.step, m.joint_goal_accuracy);
                if st.best.is_none_or(|b| m.joint_goal_accuracy > b) {
                    st.best = Some(m.joint_goal_accuracy);
                    let meta = meta(cfg, &train_split, st.best)?;
                    checkpoint::save(&out.join(BEST_CHECKPOINT), &st.model, &st.tok, None, st.step, &meta)?;
                }
            }
            let meta = meta(cfg, &train_split, st.best)?;
            checkpoint::save(
                &out.join(LAST_CHECKPOINT),
                &st.model,
                &st.tok,
                Some(&st.opt),
                st.step,
                &meta,
            )?;
        }
    }
    let meta = meta(cfg, &train_split, st.best)?;
    checkpoint::save(
        &out.join(LAST_CHECKPOINT),
        &st.model,
        &st.tok,
        Some(&st.opt),
        st.step,
        &meta,
    )?;
    if dev.is_none() || !out.join(BEST_CHECKPOINT).exists() {
        checkpoint::save(&out.join(BEST_CHECKPOINT), &st.model, &st.tok, None, st.step, &meta)?;
    }
    Ok(TrainOutcome {
        best_checkpoint: out.join(BEST_CHECKPOINT),
        last_checkpoint: out.join(LAST_CHECKPOINT),
        best_dev_jga: st.best,
        steps_done: st.step,
        records,
        label_stats,
        skipped_overflow,
    })
}
