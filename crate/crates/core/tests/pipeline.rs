mod common;

use std::path::{Path, PathBuf};

use dst_core::corpus::{Dialogue, Service, Speaker};
use dst_core::decoding::HeadProbs;
use dst_core::error::DstError;
use dst_core::evaluation::{read_predictions, write_predictions, PredictionRecord};
use dst_core::labeling::TurnExample;
use dst_core::model::checkpoint;
use dst_core::pipeline::train::{BEST_CHECKPOINT, EVAL_LOG, LAST_CHECKPOINT, LOSS_LOG};
use dst_core::pipeline::{
    self, check_schema_compat, evaluate_dump, load_split, oracle_check, predict_oracle, predict_split, run_dialogues,
    seen_services, train, ModelPredictor, Predictor, RunConfig, TrainOptions,
};
use dst_core::toy;
use tempfile::TempDir;

const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.toml");

fn toy_root() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    toy::write_corpus(
        dir.path(),
        toy::ToySizes {
            train: 12,
            dev: 6,
            test: 6,
        },
        5,
    )
    .unwrap();
    dir
}

fn small_config(data: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(Path::new(TINY)).unwrap();
    cfg.data_root = data.into();
    cfg.output_dir = out.into();
    cfg.batch_size = 4;
    cfg.total_steps = 8;
    cfg.eval_every = 4;
    cfg.log_every = 1;
    cfg.dev_dialogues = 3;
    cfg
}

#[test]
fn shipped_configs_load() {
    let tiny = RunConfig::load(Path::new(TINY)).unwrap();
    assert!(!tiny.shuffle_schema);
    let base = RunConfig::load(&Path::new(TINY).with_file_name("base.toml")).unwrap();
    assert_eq!(base.total_steps, 55_000);
    assert!(base.shuffle_schema);
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    assert!(matches!(
        RunConfig::from_toml_str("warmup_fraction = 1.5"),
        Err(DstError::Config(_))
    ));
    assert!(RunConfig::from_toml_str("no_such_key = 1").is_err());
    assert!(RunConfig::from_toml_str("disabled_carryover = [\"bogus\"]").is_err());
    let mut c = cfg.clone();
    for name in pipeline::config::ABLATIONS {
        c.apply_ablation(name).unwrap();
    }
    assert!(c.apply_ablation("everything").is_err());
    // Paths and evaluation cadence do not move the training hash.
    let mut moved = cfg.clone();
    moved.output_dir = PathBuf::from("elsewhere");
    moved.eval_every = 7;
    assert_eq!(moved.training_hash(), cfg.training_hash());
    moved.learning_rate *= 2.0;
    assert_ne!(moved.training_hash(), cfg.training_hash());
}

#[test]
fn train_smoke_writes_artifacts() {
    let data = toy_root();
    let out = tempfile::tempdir().unwrap();
    let cfg = small_config(data.path(), out.path());
    let o = train::<f32>(&cfg, &TrainOptions::default()).unwrap();
    assert_eq!(o.steps_done, 8);
    assert_eq!(o.records.len(), 8);
    assert!(o.best_dev_jga.is_some());
    for f in [BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG, EVAL_LOG] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 1 + 8);
    assert!(log.lines().next().unwrap().contains("carryover"));
    assert!(o.records.iter().all(|r| r.total.is_finite() && r.total > 0.0));
}

#[test]
fn interrupted_run_resumes_identically() {
    let data = toy_root();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let whole = train::<f32>(&small_config(data.path(), a.path()), &TrainOptions::default()).unwrap();

    let cfg = small_config(data.path(), b.path());
    let first = train::<f32>(
        &cfg,
        &TrainOptions {
            stop_after: Some(3),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(first.steps_done, 3);
    let rest = train::<f32>(
        &cfg,
        &TrainOptions {
            resume: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(rest.records.first().map(|r| r.step), Some(4));

    let stitched: Vec<_> = first.records.iter().chain(&rest.records).collect();
    assert_eq!(stitched.len(), whole.records.len());
    for (x, y) in stitched.iter().zip(&whole.records) {
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "step {}", y.step);
    }
    let ca = checkpoint::load::<f32>(&a.path().join(LAST_CHECKPOINT)).unwrap();
    let cb = checkpoint::load::<f32>(&b.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ca.model.params.values, cb.model.params.values);
    let log = std::fs::read_to_string(b.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log, std::fs::read_to_string(a.path().join(LOSS_LOG)).unwrap());
}

#[test]
fn resume_refuses_a_changed_config() {
    let data = toy_root();
    let out = tempfile::tempdir().unwrap();
    let mut cfg = small_config(data.path(), out.path());
    train::<f32>(
        &cfg,
        &TrainOptions {
            stop_after: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    cfg.learning_rate *= 10.0;
    let err = train::<f32>(
        &cfg,
        &TrainOptions {
            resume: true,
            stop_after: Some(3),
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, DstError::Config(ref m) if m.contains("--force")), "{err}");
    let forced = TrainOptions {
        resume: true,
        force: true,
        stop_after: Some(3),
    };
    assert_eq!(train::<f32>(&cfg, &forced).unwrap().steps_done, 3);
}

/// Fails the test if the predictor is handed anything from the annotation.
struct Guard<'a>(ModelPredictor<'a, f32>);

impl Predictor for Guard<'_> {
    fn predict(&self, ex: &TurnExample, service: &Service) -> dst_core::Result<Option<HeadProbs>> {
        assert!(
            ex.labels.is_none() && ex.gold_state.is_none() && ex.gold_variants.is_empty(),
            "{}",
            ex.id
        );
        self.0.predict(ex, service)
    }
}

/// Same involvement pattern, different gold values, intents and requests.
fn poisoned(ds: &[Dialogue]) -> Vec<Dialogue> {
    let mut out = ds.to_vec();
    for d in &mut out {
        for t in d.turns.iter_mut().filter(|t| t.speaker == Speaker::User) {
            for f in &mut t.frames {
                let Some(st) = f.state.as_mut() else { continue };
                st.slot_values.values_mut().for_each(|v| v.push_str(" poisoned"));
                st.active_intent.push_str("_poisoned");
                st.requested_slots = st.requested_slots.iter().map(|s| format!("{s}_x")).collect();
                f.value_variants.clear();
                f.actions.clear();
            }
        }
    }
    out
}

#[test]
fn prediction_never_reads_gold_values() {
    let data = toy_root();
    let out = tempfile::tempdir().unwrap();
    let cfg = small_config(data.path(), out.path());
    train::<f32>(
        &cfg,
        &TrainOptions {
            stop_after: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    let ck = checkpoint::load::<f32>(&out.path().join(LAST_CHECKPOINT)).unwrap();
    let dev = load_split(data.path(), "dev").unwrap();
    let predictor = Guard(ModelPredictor {
        model: &ck.model,
        tok: &ck.tokenizer,
        options: cfg.encoder_options(),
    });
    let opts = cfg.decode_options().unwrap();
    let (clean, _) = run_dialogues(&dev.dialogues, &dev.schema, &ck.tokenizer, &predictor, &opts).unwrap();
    let (dirty, _) = run_dialogues(&poisoned(&dev.dialogues), &dev.schema, &ck.tokenizer, &predictor, &opts).unwrap();
    assert!(!clean.is_empty());
    assert_eq!(clean, dirty);
}

#[test]
fn predict_and_evaluate_round_trip() {
    let data = toy_root();
    let out = tempfile::tempdir().unwrap();
    let cfg = small_config(data.path(), out.path());
    let o = train::<f32>(&cfg, &TrainOptions::default()).unwrap();
    let dev = load_split(data.path(), "dev").unwrap();
    let path = pipeline::predictions_path(&cfg, "dev", false);
    let (records, _) = predict_split::<f32>(&cfg, &o.best_checkpoint, &dev, &path).unwrap();
    assert_eq!(read_predictions(&path).unwrap().len(), records.len());

    let seen = seen_services(&cfg);
    assert!(seen.contains(toy::RESTAURANTS) && !seen.contains(toy::HOTELS));
    let report = evaluate_dump(&path, &dev, &seen).unwrap();
    assert!(report.unseen.frames > 0 && report.seen.frames > 0);
    assert_eq!(report.seen.frames + report.unseen.frames, report.overall.frames);
    assert!(path.with_extension("report.json").exists());
    let csv = std::fs::read_to_string(path.with_extension("report.csv")).unwrap();
    assert!(csv.contains("seen") && csv.contains("unseen"));
}

#[test]
fn oracle_dump_scores_perfectly() {
    let data = toy_root();
    let dev = load_split(data.path(), "dev").unwrap();
    let path = data.path().join("oracle.jsonl");
    predict_oracle(&dev, &Default::default(), &path).unwrap();
    let report = evaluate_dump(&path, &dev, &Default::default()).unwrap();
    assert!(report.overall.joint_goal_accuracy >= 0.99, "{:?}", report.overall);

    // Gold states as predictions score 1 everywhere.
    let gold: Vec<PredictionRecord> = dst_core::evaluation::gold_frames(&dev.dialogues)
        .into_iter()
        .map(|g| PredictionRecord {
            dialogue_id: g.key.dialogue_id,
            turn_index: g.key.turn_index,
            service: g.key.service,
            state: g.state,
        })
        .collect();
    let gpath = data.path().join("gold.jsonl");
    write_predictions(&gpath, &gold).unwrap();
    let m = evaluate_dump(&gpath, &dev, &Default::default()).unwrap().overall;
    assert_eq!(
        (
            m.joint_goal_accuracy,
            m.average_goal_accuracy,
            m.intent_accuracy,
            m.requested_slot_f1
        ),
        (1.0, Some(1.0), 1.0, 1.0)
    );
}

#[test]
fn missing_frames_are_named() {
    let data = toy_root();
    let dev = load_split(data.path(), "dev").unwrap();
    let path = data.path().join("p.jsonl");
    let (mut records, _) = predict_oracle(&dev, &Default::default(), &path).unwrap();
    let dropped = records.remove(3);
    write_predictions(&path, &records).unwrap();
    match evaluate_dump(&path, &dev, &Default::default()) {
        Err(DstError::Alignment(m)) => assert!(m.contains(&dropped.key().to_string()), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn changed_service_definition_is_rejected() {
    let trained = toy::train_schema();
    let mut data = toy::eval_schema();
    check_schema_compat(&trained, &data).unwrap();
    data.services.get_mut(toy::RESTAURANTS).unwrap().slots.pop();
    assert!(matches!(
        check_schema_compat(&trained, &data),
        Err(DstError::Validation(_))
    ));
}

#[test]
fn empty_split_is_handled() {
    let dir = tempfile::tempdir().unwrap();
    let split_dir = dir.path().join("train");
    std::fs::create_dir_all(&split_dir).unwrap();
    std::fs::write(
        split_dir.join("schema.json"),
        toy::train_schema().to_json_string().unwrap(),
    )
    .unwrap();
    let split = load_split(dir.path(), "train").unwrap();
    assert!(split.dialogues.is_empty());
    let r = oracle_check(&split).unwrap();
    assert_eq!(r.frames, 0);

    let out = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), out.path());
    let err = train::<f32>(&cfg, &TrainOptions::default()).unwrap_err();
    assert!(
        matches!(err, DstError::Validation(ref m) if m.contains("no examples")),
        "{err}"
    );
}

#[test]
fn dump_examples_renders_every_example() {
    let data = toy_root();
    let split = load_split(data.path(), "dev").unwrap();
    let tok = pipeline::split_tokenizer(&split);
    let out = tempfile::tempdir().unwrap();
    let cfg = small_config(data.path(), out.path());
    let (text, labels) = pipeline::dump_examples(&cfg, &split, &tok, out.path()).unwrap();
    let (ex, _) = pipeline::data::gold_examples(&split, &tok).unwrap();
    let lines = std::fs::read_to_string(labels).unwrap().lines().count();
    assert_eq!(lines, ex.len());
    assert!(std::fs::read_to_string(text).unwrap().contains("part4 slots"));
}
