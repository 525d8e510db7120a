use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dst_core::model::checkpoint;
use dst_core::pipeline::config::{Precision, DATA_ROOT_ENV};
use dst_core::pipeline::{self, load_split, train, RunConfig, TrainOptions};
use dst_core::toy;

#[derive(Parser)]
#[command(name = "dst", version, about = "Schema-guided dialogue state tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with one directory per split; overrides `data_root`.
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    /// Applies a named ablation; repeatable.
    #[arg(long = "ablation")]
    ablations: Vec<String>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and keep the checkpoint with the best dev JGA.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from `<output_dir>/last.safetensors`.
        #[arg(long)]
        resume: bool,
        /// Resume even if the configuration changed.
        #[arg(long)]
        force: bool,
    },
    /// Predict a split turn by turn with a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Disables a carryover class at decode time; repeatable.
        #[arg(long = "disable-carryover")]
        disable_carryover: Vec<String>,
        /// Decode gold head labels instead of running a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Score a prediction dump against a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render encoded inputs and labels of a split.
    DumpExamples {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "train")]
        split: String,
        /// Use this checkpoint's vocabulary.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Gold labels through the decoder must reproduce the gold states.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Write the synthetic toy corpus.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(root) = &c.data_root {
        cfg.data_root = root.clone();
    }
    for a in &c.ablations {
        cfg.apply_ablation(a)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.output_dir {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { common, resume, force } => {
            let cfg = load_config(&common)?;
            let opts = TrainOptions {
                resume,
                force,
                stop_after: None,
            };
            let out = match cfg.precision {
                Precision::F32 => train::train::<f32>(&cfg, &opts)?,
                Precision::F64 => train::train::<f64>(&cfg, &opts)?,
            };
            println!("steps: {}", out.steps_done);
            if let Some(b) = out.best_dev_jga {
                println!("best dev JGA: {b:.4}");
            }
            println!("checkpoint: {}", out.best_checkpoint.display());
            Ok(true)
        }
        Command::Predict {
            common,
            checkpoint,
            split,
            disable_carryover,
            oracle,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.disabled_carryover.extend(disable_carryover);
            cfg.validate()?;
            let data = load_split(&cfg.data_root, &split)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let out = pipeline::predictions_path(&cfg, &split, oracle);
            let (records, diag) = if oracle {
                pipeline::predict_oracle(&data, &cfg.decode_options()?, &out)?
            } else {
                let ck = checkpoint.unwrap_or_else(|| cfg.output_dir.join(train::BEST_CHECKPOINT));
                match cfg.precision {
                    Precision::F32 => pipeline::predict_split::<f32>(&cfg, &ck, &data, &out),
                    Precision::F64 => pipeline::predict_split::<f64>(&cfg, &ck, &data, &out),
                }
                .with_context(|| format!("predicting with {}", ck.display()))?
            };
            println!("{} frames -> {}", records.len(), out.display());
            if diag.empty_carryover_source + diag.empty_span > 0 {
                println!(
                    "empty carryover sources: {}, empty spans: {}",
                    diag.empty_carryover_source, diag.empty_span
                );
            }
            Ok(true)
        }
        Command::Evaluate {
            common,
            predictions,
            split,
        } => {
            let cfg = load_config(&common)?;
            let data = load_split(&cfg.data_root, &split)?;
            let report = pipeline::evaluate_dump(&predictions, &data, &pipeline::seen_services(&cfg))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::DumpExamples {
            common,
            split,
            checkpoint: ck,
        } => {
            let cfg = load_config(&common)?;
            let data = load_split(&cfg.data_root, &split)?;
            let tok = match ck {
                Some(p) => checkpoint::load::<f32>(&p)?.tokenizer,
                None => pipeline::split_tokenizer(&data),
            };
            let (text, labels) = pipeline::dump_examples(&cfg, &data, &tok, &cfg.output_dir)?;
            println!("{}\n{}", text.display(), labels.display());
            Ok(true)
        }
        Command::OracleCheck { common, split } => {
            let cfg = load_config(&common)?;
            let data = load_split(&cfg.data_root, &split)?;
            let report = pipeline::oracle_check(&data)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passes())
        }
        Command::MakeToy { out, seed } => {
            if out.join("train").exists() {
                bail!("{} already holds a corpus", out.display());
            }
            toy::write_corpus(&out, toy::ToySizes::default(), seed)?;
            println!("toy corpus written to {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
