//! Command-line front end.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use valresp_core::corpus::{generate_synthetic, Dialogue, Source};
use valresp_core::pipeline::{decide_turn, FrozenClock, Models};
use valresp_core::saliency::{cause_match, token_scores, top_k_causes};
use valresp_core::Emotion;

use crate::config::{seeds, CorpusFile, CorpusSpec, PipelineConfig};
use crate::error::AppError;
use crate::experiment::{self, Task};
use crate::io;
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "valresp", version, about = "Validating-response dialogue pipeline")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output or run directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus as dialogue JSON Lines.
    Synth(OutputArg),
    /// Label validation timing for every adjacent pair of a dialogue file.
    Annotate(InputOutput),
    /// Split a dialogue file into train/dev/test files under --out.
    Split(InputArg),
    /// Train one stage on the configured corpus.
    Train {
        #[arg(long, value_enum)]
        task: TrainTask,
    },
    /// Evaluate trained checkpoints on the test split.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        /// Append one CSV row with the scalar metrics.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Emit cause candidates for emotion examples as JSON Lines.
    ExtractCauses(InputOutputOptional),
    /// Decide one turn and print the decision.
    Respond {
        /// The utterance to respond to.
        #[arg(long)]
        text: String,
        /// Earlier turns, oldest first.
        #[arg(long)]
        history: Vec<String>,
    },
    /// Run the full experiment and write the report.
    Pipeline,
    /// Serve the session HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Allowed browser origin; repeatable. `*` allows any.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
        /// Append every turn to this JSON Lines file.
        #[arg(long)]
        persist: Option<PathBuf>,
        #[arg(long)]
        ttl_secs: Option<u64>,
        #[arg(long, default_value_t = 4096)]
        max_message_bytes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTask {
    Mlm,
    Timing,
    Emotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Timing,
    Emotion,
    Cause,
    Generation,
}

#[derive(Debug, Args)]
pub struct OutputArg {
    /// Destination file; defaults to `<out>/dialogues.jsonl`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArg {
    #[arg(long)]
    pub input: PathBuf,
    /// Source of every dialogue in the file, overriding per-line values.
    #[arg(long)]
    pub source: Option<String>,
}

#[derive(Debug, Args)]
pub struct InputOutput {
    #[command(flatten)]
    pub input: InputArg,
    /// Destination file; defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputOutputOptional {
    /// Dialogue file; defaults to the test split of the configured corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<String>,
    /// Destination file; defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_source(s: &Option<String>) -> Result<Option<Source>, AppError> {
    s.as_ref()
        .map(|s| {
            serde_json::from_value(Value::String(s.clone())).map_err(|_| {
                AppError::Config(format!("unknown source {s:?}; use text_corpus, spoken_corpus or synthetic"))
            })
        })
        .transpose()
}

/// Config from `--config`, else from `<out>/config.json` when present, else
/// defaults; then the `--seed` and `--out` overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, AppError> {
    let mut cfg = match (&cli.config, &cli.out) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(out)) if out.join("config.json").is_file() => PipelineConfig::load(&out.join("config.json"))?,
        _ => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn emit_jsonl<T: Serialize>(output: Option<&Path>, items: &[T]) -> Result<(), AppError> {
    match output {
        Some(p) => io::write_jsonl(p, items),
        None => {
            for it in items {
                stdout_line(&serde_json::to_string(it).map_err(|e| AppError::runtime("serialize", e))?)?;
            }
            Ok(())
        }
    }
}

/// Writes one line to stdout; a closed pipe ends the process quietly.
fn stdout_line(text: &str) -> Result<(), AppError> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => r.map_err(|e| AppError::io("<stdout>", e)),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| AppError::runtime("serialize", e))?;
    stdout_line(&text)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_owned() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Number(n) => out.push((prefix.to_owned(), n.to_string())),
        Value::Bool(b) => out.push((prefix.to_owned(), b.to_string())),
        Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        Value::Null => out.push((prefix.to_owned(), String::new())),
        Value::Array(_) => {}
    }
}

/// Appends the scalar leaves of `v` as one CSV row, writing a header when the
/// file is new.
pub fn append_csv_row(path: &Path, run: &str, task: &str, v: &Value) -> Result<(), AppError> {
    let mut cells = vec![("run".to_owned(), run.to_owned()), ("task".to_owned(), task.to_owned())];
    flatten("", v, &mut cells);
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| AppError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| AppError::runtime("csv", e);
    if fresh {
        w.write_record(cells.iter().map(|(k, _)| k)).map_err(csv_err)?;
    }
    w.write_record(cells.iter().map(|(_, v)| v)).map_err(csv_err)?;
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Debug, Serialize)]
struct CauseLine {
    dialogue_id: String,
    predicted_emotion: Emotion,
    causes: Vec<valresp_core::pipeline::CauseView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matched: Option<bool>,
}

fn run_models(cfg: &PipelineConfig) -> Result<Models, AppError> {
    let (vocab, timing, emotion) = experiment::load_run_models(&cfg.output_dir)?;
    Models::new(vocab, timing, emotion, cfg.lexicon.clone(), cfg.settings)
        .map_err(|e| AppError::Config(format!("checkpoints do not fit together: {e}")))
}

fn extract_causes(cfg: &PipelineConfig, args: &InputOutputOptional) -> Result<(), AppError> {
    let models = run_models(cfg)?;
    let dialogues: Vec<Dialogue> = match &args.input {
        Some(p) => io::read_dialogues(p, parse_source(&args.source)?)?,
        None => {
            let [_, _, test] = experiment::split_dialogues(cfg, experiment::load_corpus(cfg)?)?;
            test
        }
    };
    let examples = experiment::emotion_examples(&dialogues, &cfg.rules);
    let norm = cfg.rules.normalizer();
    let model = &models.emotion;
    let mut lines = Vec::new();
    for e in &examples {
        let (seq, ids) = models.vocab.prepare(&e.context, model.config.max_len);
        if ids.is_empty() {
            continue;
        }
        let pred = model.forward(&ids).map_err(|err| AppError::runtime("emotion", err))?;
        let sal = token_scores(model, &ids, pred.label, cfg.settings.aggregation)
            .map_err(|err| AppError::runtime("saliency", err))?;
        let causes = top_k_causes(&sal, &seq, cfg.settings.top_k);
        let matched = e.cause_phrase.as_deref().map(|g| cause_match(&causes, g, &norm));
        lines.push(CauseLine {
            dialogue_id: e.dialogue_id.clone(),
            predicted_emotion: Emotion::from_index(pred.label).expect("8-class model"),
            causes: causes
                .into_iter()
                .map(|c| valresp_core::pipeline::CauseView { phrase: c.phrase, score: c.score, span: c.span })
                .collect(),
            matched,
        });
    }
    emit_jsonl(args.output.as_deref(), &lines)
}

fn eval(cfg: &PipelineConfig, task: EvalTask, csv: Option<&Path>) -> Result<(), AppError> {
    let prep = experiment::prepare(cfg)?;
    let (vocab, timing, emotion) = experiment::load_run_models(&cfg.output_dir)?;
    if vocab.fingerprint() != prep.vocab.fingerprint() {
        return Err(AppError::Data(format!(
            "the vocabulary in {} does not match the configured corpus; rerun training",
            cfg.output_dir.display()
        )));
    }
    let (name, value) = match task {
        EvalTask::Timing => {
            let (records, report) = experiment::eval_timing(&timing, &vocab, &prep.timing[2])?;
            let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
            let baseline = experiment::random_baseline(cfg, &prep, Task::Timing, &labels)?;
            ("timing", serde_json::json!({ "report": report, "random_baseline": baseline }))
        }
        other => {
            let (_, ev) = experiment::eval_emotion(&emotion, &vocab, &prep.emotion[2], cfg)?;
            let v = match other {
                EvalTask::Emotion => ("emotion", serde_json::to_value(&ev.report)),
                EvalTask::Cause => ("cause", serde_json::to_value(&ev.cause)),
                _ => ("generation", serde_json::to_value(&ev.generation)),
            };
            (v.0, v.1.map_err(|e| AppError::runtime("serialize", e))?)
        }
    };
    print_json(&value)?;
    if let Some(path) = csv {
        append_csv_row(path, &cfg.output_dir.display().to_string(), name, &value)?;
    }
    Ok(())
}

fn train(cfg: &PipelineConfig, task: TrainTask) -> Result<(), AppError> {
    let prep = experiment::prepare(cfg)?;
    experiment::write_run_header(cfg, &prep)?;
    let mut trainer = experiment::Trainer::new(cfg, &prep);
    match task {
        TrainTask::Mlm => {
            let Some((params, log)) = trainer.pretrain()? else {
                return Err(AppError::Config("mlm.enabled is false".into()));
            };
            let ck = valresp_core::neuralnet::Checkpoint::new(
                &params,
                experiment::VOCAB_FILE,
                prep.vocab.fingerprint(),
                None,
            );
            io::save_checkpoint(&cfg.output_dir.join("checkpoints/mlm.json"), &ck)?;
            io::write_json_pretty(&cfg.output_dir.join("train_logs/mlm.json"), &log)?;
            print_json(&log)
        }
        TrainTask::Timing | TrainTask::Emotion => {
            let t = if task == TrainTask::Timing { Task::Timing } else { Task::Emotion };
            let (_, log) = trainer.train(t)?;
            print_json(&valresp_core::neuralnet::TrainSummary::from_log(t.name(), &log))
        }
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = resolve_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Synth(args) => {
            let CorpusSpec::Synthetic(spec) = &cfg.corpus else {
                return Err(AppError::Config("synth needs a synthetic corpus spec".into()));
            };
            let dialogues = generate_synthetic(spec, cfg.stage_seed(seeds::SYNTHESIS))
                .map_err(|e| AppError::Config(e.to_string()))?;
            let path = args.output.unwrap_or_else(|| out.join("dialogues.jsonl"));
            io::write_dialogues(&path, &dialogues)?;
            eprintln!("wrote {} dialogues to {}", dialogues.len(), path.display());
            Ok(())
        }
        Command::Annotate(args) => {
            let dialogues = io::read_dialogues(&args.input.input, parse_source(&args.input.source)?)?;
            let examples = experiment::timing_examples(&dialogues, &cfg.rules)?;
            emit_jsonl(args.output.as_deref(), &examples)
        }
        Command::Split(args) => {
            let source = parse_source(&args.source)?;
            let mut cfg = cfg;
            cfg.corpus = CorpusSpec::Files(vec![CorpusFile { path: args.input.clone(), source }]);
            cfg.validate()?;
            let parts = experiment::split_dialogues(&cfg, experiment::load_corpus(&cfg)?)?;
            for (name, part) in ["train", "dev", "test"].iter().zip(&parts) {
                io::write_dialogues(&out.join(format!("{name}.jsonl")), part)?;
            }
            eprintln!("split sizes: {} / {} / {}", parts[0].len(), parts[1].len(), parts[2].len());
            Ok(())
        }
        Command::Train { task } => train(&cfg, task),
        Command::Eval { task, csv } => eval(&cfg, task, csv.as_deref()),
        Command::ExtractCauses(args) => extract_causes(&cfg, &args),
        Command::Respond { text, history } => {
            let models = run_models(&cfg)?;
            let refs: Vec<&str> = history.iter().map(String::as_str).collect();
            let d = decide_turn(&models, &refs, &text, &FrozenClock).map_err(|e| match e {
                valresp_core::pipeline::PipelineError::EmptyInput => AppError::Data(e.to_string()),
                other => AppError::runtime("respond", other),
            })?;
            print_json(&d)
        }
        Command::Pipeline => {
            let report = experiment::run_experiment(&cfg)?;
            print_json(&serde_json::json!({
                "output_dir": cfg.output_dir,
                "timing_macro_f1": report.timing.test.macro_avg.f1,
                "timing_baseline_macro_f1": report.timing.random_baseline.macro_avg.f1,
                "emotion_accuracy": report.emotion.test.accuracy,
                "cause_accuracy": report.cause.accuracy,
            }))
        }
        Command::Serve { bind, cors_origins, persist, ttl_secs, max_message_bytes } => {
            let mut svc = ServiceConfig::for_run_dir(&out);
            if let Some(b) = bind {
                svc.bind = b;
            }
            if !cors_origins.is_empty() {
                svc.cors_origins = cors_origins;
            }
            if let Some(t) = ttl_secs {
                svc.ttl = std::time::Duration::from_secs(t);
            }
            svc.persist = persist;
            svc.max_message_bytes = max_message_bytes;
            let svc = svc.with_env(|k| std::env::var(k).ok())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::runtime("tokio", e))?;
            rt.block_on(service::serve(svc, cfg.lexicon.clone(), cfg.settings))
        }
    }
}
