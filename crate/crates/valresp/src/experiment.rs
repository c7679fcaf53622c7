//! The full experiment: corpus → annotation → split → vocabulary → optional
//! MLM pretraining → timing and emotion fine-tuning → test evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use valresp_core::corpus::{
    annotate_with, emotion_example, generate_synthetic, preprocess_spoken, split_grouped, Dialogue, LabeledExample,
    PhraseRuleSet, Source, TimingLabel,
};
use valresp_core::metrics::{
    bleu, cause_accuracy, classification_report, embed_score, EmbedScore, MetricReport, BLEU_EPSILON,
};
use valresp_core::neuralnet::{
    pretrain_mlm, train_classifier, Checkpoint, MlmLog, ModelParams, Sample, TrainConfig, TrainLog, TrainSummary,
};
use valresp_core::normalize::{surface, Normalization};
use valresp_core::pipeline::{run_random_baseline, CauseView};
use valresp_core::responder::{generate_response, HeuristicNounPredicate, ResponseBranch};
use valresp_core::saliency::{cause_match, token_scores, top_k_causes};
use valresp_core::text::{tokenize, TokenSequence, Vocabulary};
use valresp_core::{Emotion, NUM_EMOTIONS};

use crate::config::{seeds, CorpusSpec, ModelSpec, PipelineConfig};
use crate::error::AppError;
use crate::io;

pub const VOCAB_FILE: &str = "vocab.json";
pub const TIMING_CHECKPOINT: &str = "checkpoints/timing.json";
pub const EMOTION_CHECKPOINT: &str = "checkpoints/emotion.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Dialogues of one run, after spoken preprocessing.
pub fn load_corpus(cfg: &PipelineConfig) -> Result<Vec<Dialogue>, AppError> {
    let dialogues = match &cfg.corpus {
        CorpusSpec::Synthetic(s) => {
            generate_synthetic(s, cfg.stage_seed(seeds::SYNTHESIS)).map_err(|e| AppError::Config(e.to_string()))?
        }
        CorpusSpec::Files(files) => {
            let mut all = Vec::new();
            let mut seen = BTreeSet::new();
            for f in files {
                for d in io::read_dialogues(&f.path, f.source)? {
                    if !seen.insert(d.id.clone()) {
                        return Err(AppError::Data(format!(
                            "dialogue id {:?} appears in more than one corpus file",
                            d.id
                        )));
                    }
                    all.push(d);
                }
            }
            all
        }
    };
    Ok(dialogues
        .into_iter()
        .map(|d| if d.source == Source::SpokenCorpus { preprocess_spoken(&d, &cfg.spoken_filter) } else { d })
        .collect())
}

/// Train/dev/test dialogues, split per source with that source's ratios.
pub fn split_dialogues(cfg: &PipelineConfig, dialogues: Vec<Dialogue>) -> Result<[Vec<Dialogue>; 3], AppError> {
    let mut by_source: BTreeMap<u8, Vec<Dialogue>> = BTreeMap::new();
    for d in dialogues {
        let key = match d.source {
            Source::TextCorpus => 0,
            Source::SpokenCorpus => 1,
            Source::Synthetic => 2,
        };
        by_source.entry(key).or_default().push(d);
    }
    let mut out: [Vec<Dialogue>; 3] = Default::default();
    for group in by_source.into_values() {
        let spec = cfg.split.for_source(group[0].source, cfg.stage_seed(seeds::SPLIT));
        let parts = split_grouped(group, |d| d.id.as_str(), &spec).map_err(|e| AppError::Data(e.to_string()))?;
        for (o, p) in out.iter_mut().zip(parts) {
            o.extend(p);
        }
    }
    Ok(out)
}

pub fn timing_examples(dialogues: &[Dialogue], rules: &PhraseRuleSet) -> Result<Vec<LabeledExample>, AppError> {
    let compiled = rules.compile().map_err(|e| AppError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for d in dialogues {
        out.extend(annotate_with(d, &compiled).map_err(|e| AppError::Data(e.to_string()))?);
    }
    Ok(out)
}

pub fn emotion_examples(dialogues: &[Dialogue], rules: &PhraseRuleSet) -> Vec<LabeledExample> {
    let norm = rules.normalizer();
    dialogues.iter().filter_map(|d| emotion_example(d, &norm)).collect()
}

/// Vocabulary over every utterance of the training dialogues.
pub fn build_vocabulary(cfg: &PipelineConfig, train: &[Dialogue]) -> Result<Vocabulary, AppError> {
    let seqs: Vec<TokenSequence> = train
        .iter()
        .flat_map(|d| &d.turns)
        .map(|u| tokenize(&surface(&u.text, Normalization::UnicodeCompat), cfg.tokenizer))
        .collect();
    Vocabulary::build(&seqs, cfg.min_freq, cfg.tokenizer).map_err(|e| AppError::Data(e.to_string()))
}

fn label_of(e: &LabeledExample) -> Option<usize> {
    e.timing_label.map(TimingLabel::index).or(e.emotion_label.map(Emotion::index))
}

/// Encodes labeled examples, dropping those whose context has no tokens.
pub fn to_samples(vocab: &Vocabulary, examples: &[LabeledExample], max_len: usize) -> Vec<Sample> {
    examples
        .iter()
        .filter_map(|e| {
            let (_, ids) = vocab.prepare(&e.context, max_len);
            let label = label_of(e)?;
            (!ids.is_empty()).then_some(Sample { ids, label })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPrediction {
    pub task: String,
    pub dialogue_id: String,
    pub turn: usize,
    pub label: usize,
    pub prediction: usize,
    /// Probability of the validating class.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub task: String,
    pub dialogue_id: String,
    pub turn: usize,
    pub label: Emotion,
    pub prediction: Emotion,
    pub confidence: f64,
    pub causes: Vec<CauseView>,
    pub gold_cause: Option<String>,
    /// Set only for correctly classified examples with a gold cause.
    pub cause_matched: Option<bool>,
    pub cause_embed: Option<EmbedScore>,
    pub cause_bleu: Option<f64>,
    pub response: String,
    pub branch: ResponseBranch,
    /// Set only when the gold reply is itself validating.
    pub reference_response: Option<String>,
    pub generation_embed: Option<EmbedScore>,
    pub generation_bleu: Option<f64>,
}

pub fn eval_timing(
    model: &ModelParams,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<(Vec<TimingPrediction>, MetricReport), AppError> {
    let mut records = Vec::new();
    for e in examples {
        let Some(label) = e.timing_label else { continue };
        let (_, ids) = vocab.prepare(&e.context, model.config.max_len);
        if ids.is_empty() {
            continue;
        }
        let p = model.forward(&ids).map_err(|err| AppError::runtime("timing evaluation", err))?;
        records.push(TimingPrediction {
            task: "timing".into(),
            dialogue_id: e.dialogue_id.clone(),
            turn: e.turn,
            label: label.index(),
            prediction: p.label,
            confidence: p.distribution[TimingLabel::Validating.index()],
        });
    }
    let report = timing_report(&records)?;
    Ok((records, report))
}

pub fn timing_report(records: &[TimingPrediction]) -> Result<MetricReport, AppError> {
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let preds: Vec<usize> = records.iter().map(|r| r.prediction).collect();
    classification_report(&labels, &preds, Some(TimingLabel::Validating.index()))
        .map_err(|e| AppError::runtime("timing evaluation", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseReport {
    pub evaluated: usize,
    pub top_k: usize,
    pub accuracy: Option<f64>,
    pub embed_score: Option<EmbedScore>,
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub evaluated: usize,
    pub embed_score: Option<EmbedScore>,
    pub bleu: Option<f64>,
    pub branches: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionEval {
    pub report: MetricReport,
    pub cause: CauseReport,
    pub generation: GenerationReport,
}

fn chars(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Classification, cause extraction and response generation on emotion
/// examples.
pub fn eval_emotion(
    model: &ModelParams,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
    cfg: &PipelineConfig,
) -> Result<(Vec<EmotionPrediction>, EmotionEval), AppError> {
    let rules = cfg.rules.compile().map_err(|e| AppError::Config(e.to_string()))?;
    let norm = cfg.rules.normalizer();
    let nouns = HeuristicNounPredicate::default();
    let err = |stage| move |e: valresp_core::neuralnet::ModelError| AppError::runtime(stage, e);
    let mut records = Vec::new();
    for e in examples {
        let Some(label) = e.emotion_label else { continue };
        let (seq, ids) = vocab.prepare(&e.context, model.config.max_len);
        if ids.is_empty() {
            continue;
        }
        let pred = model.forward(&ids).map_err(err("emotion evaluation"))?;
        let prediction = Emotion::from_index(pred.label).expect("8-class model");
        let sal = token_scores(model, &ids, pred.label, cfg.settings.aggregation).map_err(err("saliency"))?;
        let causes = top_k_causes(&sal, &seq, cfg.settings.top_k);
        let (mut cause_matched, mut cause_embed, mut cause_bleu) = (None, None, None);
        if let (Some(gold), true) = (e.cause_phrase.as_deref(), prediction == label) {
            cause_matched = Some(cause_match(&causes, gold, &norm));
            if let Some(best) = causes.first() {
                let (_, c_ids) = vocab.prepare(&best.phrase, model.config.max_len);
                let (_, g_ids) = vocab.prepare(gold, model.config.max_len);
                if !c_ids.is_empty() && !g_ids.is_empty() {
                    cause_embed = Some(
                        embed_score(model, &c_ids, &g_ids).map_err(|e| AppError::runtime("cause embed_score", e))?,
                    );
                }
                cause_bleu = bleu(&chars(&best.phrase), &chars(gold), 4, BLEU_EPSILON).ok();
            }
        }
        let (response, decision) =
            generate_response(&e.context, &pred, &causes, &cfg.lexicon, &cfg.settings.responder, &nouns)
                .map_err(|e| AppError::runtime("generation", e))?;
        let reference = e.response.as_deref().filter(|r| rules.matches(r)).map(str::to_owned);
        let (mut generation_embed, mut generation_bleu) = (None, None);
        if let Some(r) = &reference {
            let (_, c_ids) = vocab.prepare(&surface(&response, Normalization::UnicodeCompat), model.config.max_len);
            let (_, r_ids) = vocab.prepare(&surface(r, Normalization::UnicodeCompat), model.config.max_len);
            if !c_ids.is_empty() && !r_ids.is_empty() {
                generation_embed = Some(
                    embed_score(model, &c_ids, &r_ids).map_err(|e| AppError::runtime("generation embed_score", e))?,
                );
            }
            generation_bleu = bleu(&chars(&response), &chars(r), 4, BLEU_EPSILON).ok();
        }
        records.push(EmotionPrediction {
            task: "emotion".into(),
            dialogue_id: e.dialogue_id.clone(),
            turn: e.turn,
            label,
            prediction,
            confidence: pred.confidence,
            causes: causes.into_iter().map(|c| CauseView { phrase: c.phrase, score: c.score, span: c.span }).collect(),
            gold_cause: e.cause_phrase.clone(),
            cause_matched,
            cause_embed,
            cause_bleu,
            response,
            branch: decision.branch,
            reference_response: reference,
            generation_embed,
            generation_bleu,
        });
    }
    let eval = emotion_summary(&records, cfg.settings.top_k)?;
    Ok((records, eval))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_embed<'a>(xs: impl Iterator<Item = &'a EmbedScore> + Clone) -> Option<EmbedScore> {
    Some(EmbedScore {
        precision: mean(xs.clone().map(|s| s.precision))?,
        recall: mean(xs.clone().map(|s| s.recall))?,
        f1: mean(xs.map(|s| s.f1))?,
    })
}

/// Aggregates persisted emotion records into the reported metrics.
pub fn emotion_summary(records: &[EmotionPrediction], top_k: usize) -> Result<EmotionEval, AppError> {
    let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
    let preds: Vec<usize> = records.iter().map(|r| r.prediction.index()).collect();
    let report =
        classification_report(&labels, &preds, None).map_err(|e| AppError::runtime("emotion evaluation", e))?;
    let matched: Vec<bool> = records.iter().filter_map(|r| r.cause_matched).collect();
    let cause = CauseReport {
        evaluated: matched.len(),
        top_k,
        accuracy: cause_accuracy(&matched),
        embed_score: mean_embed(records.iter().filter_map(|r| r.cause_embed.as_ref())),
        bleu: mean(records.iter().filter_map(|r| r.cause_bleu)),
    };
    let mut branches = BTreeMap::new();
    for r in records {
        let name = serde_json::to_value(r.branch).expect("enum").as_str().unwrap_or_default().to_owned();
        *branches.entry(name).or_insert(0) += 1;
    }
    let generation = GenerationReport {
        evaluated: records.iter().filter(|r| r.reference_response.is_some()).count(),
        embed_score: mean_embed(records.iter().filter_map(|r| r.generation_embed.as_ref())),
        bleu: mean(records.iter().filter_map(|r| r.generation_bleu)),
        branches,
    };
    Ok(EmotionEval { report, cause, generation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub split_dialogues: [usize; 3],
    pub timing_examples: [usize; 3],
    pub timing_positive_rate: f64,
    pub emotion_examples: [usize; 3],
    pub emotion_histogram: BTreeMap<Emotion, usize>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub test: MetricReport,
    pub random_baseline: MetricReport,
    pub train_log: TrainLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    pub corpus: CorpusStats,
    pub mlm: Option<MlmLog>,
    pub timing: TaskResult,
    pub emotion: TaskResult,
    pub cause: CauseReport,
    pub generation: GenerationReport,
}

/// Initial weights for one classifier, pretrained when MLM is enabled.
/// Pretraining runs once per distinct encoder shape.
struct Initializer<'a> {
    cfg: &'a PipelineConfig,
    vocab_size: usize,
    corpus: Vec<Vec<u32>>,
    cache: Vec<(ModelSpec, ModelParams)>,
    log: Option<MlmLog>,
}

impl Initializer<'_> {
    fn encoder(&mut self, spec: ModelSpec) -> Result<Option<ModelParams>, AppError> {
        if !self.cfg.mlm.enabled {
            return Ok(None);
        }
        let same =
            |a: &ModelSpec| a.embed_dim == spec.embed_dim && a.encoder == spec.encoder && a.max_len == spec.max_len;
        if let Some((_, p)) = self.cache.iter().find(|(s, _)| same(s)) {
            return Ok(Some(p.clone()));
        }
        let base = ModelParams::init(&spec.model_config(self.vocab_size, 2, self.cfg.stage_seed(seeds::MLM_INIT)))
            .map_err(|e| AppError::runtime("mlm", e))?;
        let corpus: Vec<Vec<u32>> =
            self.corpus.iter().map(|ids| ids[ids.len().saturating_sub(spec.max_len)..].to_vec()).collect();
        let train = TrainConfig { seed: self.cfg.stage_seed(seeds::MLM_TRAIN), ..self.cfg.mlm.train.clone() };
        let (p, log) =
            pretrain_mlm(&base, &corpus, &train, self.cfg.mlm.mask_rate).map_err(|e| AppError::runtime("mlm", e))?;
        tracing::info!(initial = log.initial_loss, last = log.final_loss, "mlm pretraining done");
        self.log.get_or_insert(log);
        self.cache.push((spec, p.clone()));
        Ok(Some(p))
    }

    fn init(&mut self, spec: ModelSpec, num_classes: usize, seed: u64) -> Result<ModelParams, AppError> {
        let stage = if num_classes == 2 { "timing init" } else { "emotion init" };
        match self.encoder(spec)? {
            Some(enc) => enc.with_new_head(num_classes, spec.hidden_dim, seed),
            None => ModelParams::init(&spec.model_config(self.vocab_size, num_classes, seed)),
        }
        .map_err(|e| AppError::runtime(stage, e))
    }
}

fn train_task(
    init: &ModelParams,
    train: &[Sample],
    dev: &[Sample],
    cfg: &TrainConfig,
    stage: &'static str,
) -> Result<(ModelParams, TrainLog), AppError> {
    let (p, log) = train_classifier(init, train, dev, cfg).map_err(|e| AppError::runtime(stage, e))?;
    tracing::info!(stage, best = log.best_score, steps = log.steps, "training done");
    Ok((p, log))
}

/// Corpus, splits, labeled examples and encoded samples of one run.
pub struct Prepared {
    pub n_dialogues: usize,
    pub splits: [Vec<Dialogue>; 3],
    pub timing: [Vec<LabeledExample>; 3],
    pub emotion: [Vec<LabeledExample>; 3],
    pub vocab: Vocabulary,
    pub timing_samples: [Vec<Sample>; 3],
    pub emotion_samples: [Vec<Sample>; 3],
}

fn three<T, U>(xs: &[T; 3], f: impl Fn(&T) -> U) -> [U; 3] {
    [f(&xs[0]), f(&xs[1]), f(&xs[2])]
}

/// Loads, splits, annotates and encodes the configured corpus.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, AppError> {
    cfg.validate()?;
    let dialogues = load_corpus(cfg)?;
    let n_dialogues = dialogues.len();
    let splits = split_dialogues(cfg, dialogues)?;
    let timing = [
        timing_examples(&splits[0], &cfg.rules)?,
        timing_examples(&splits[1], &cfg.rules)?,
        timing_examples(&splits[2], &cfg.rules)?,
    ];
    let emotion = three(&splits, |s| emotion_examples(s, &cfg.rules));
    let vocab = build_vocabulary(cfg, &splits[0])?;
    let timing_samples = three(&timing, |x| to_samples(&vocab, x, cfg.timing_model.max_len));
    let emotion_samples = three(&emotion, |x| to_samples(&vocab, x, cfg.emotion_model.max_len));
    for (name, s) in [("timing", &timing_samples), ("emotion", &emotion_samples)] {
        if s.iter().any(Vec::is_empty) {
            return Err(AppError::Data(format!("{name} train/dev/test splits must all be non-empty")));
        }
    }
    Ok(Prepared { n_dialogues, splits, timing, emotion, vocab, timing_samples, emotion_samples })
}

impl Prepared {
    pub fn stats(&self) -> CorpusStats {
        let all_timing = self.timing.iter().flatten();
        let n_timing = all_timing.clone().count();
        let positives = all_timing.filter(|e| e.timing_label == Some(TimingLabel::Validating)).count();
        let mut emotion_histogram: BTreeMap<Emotion, usize> = Emotion::ALL.iter().map(|&e| (e, 0)).collect();
        for l in self.emotion.iter().flatten().filter_map(|e| e.emotion_label) {
            *emotion_histogram.entry(l).or_default() += 1;
        }
        CorpusStats {
            dialogues: self.n_dialogues,
            split_dialogues: three(&self.splits, Vec::len),
            timing_examples: three(&self.timing, Vec::len),
            timing_positive_rate: positives as f64 / n_timing.max(1) as f64,
            emotion_examples: three(&self.emotion, Vec::len),
            emotion_histogram,
            vocab_size: self.vocab.len(),
        }
    }

    fn mlm_corpus(&self) -> Vec<Vec<u32>> {
        let mut c: Vec<Vec<u32>> =
            self.timing_samples[0].iter().chain(&self.emotion_samples[0]).map(|s| s.ids.clone()).collect();
        c.sort();
        c.dedup();
        c
    }
}

/// A trainable stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Timing,
    Emotion,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Timing => "timing",
            Task::Emotion => "emotion",
        }
    }

    pub fn checkpoint(self) -> &'static str {
        match self {
            Task::Timing => TIMING_CHECKPOINT,
            Task::Emotion => EMOTION_CHECKPOINT,
        }
    }
}

/// Weight initialization for every task of one run.
pub struct Trainer<'a> {
    cfg: &'a PipelineConfig,
    prep: &'a Prepared,
    init: Initializer<'a>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a PipelineConfig, prep: &'a Prepared) -> Self {
        let init =
            Initializer { cfg, vocab_size: prep.vocab.len(), corpus: prep.mlm_corpus(), cache: Vec::new(), log: None };
        Trainer { cfg, prep, init }
    }

    /// MLM-pretrained encoder for the timing model shape, when MLM is enabled.
    pub fn pretrain(&mut self) -> Result<Option<(ModelParams, MlmLog)>, AppError> {
        let p = self.init.encoder(self.cfg.timing_model)?;
        Ok(p.zip(self.init.log.clone()))
    }

    pub fn mlm_log(&self) -> Option<&MlmLog> {
        self.init.log.as_ref()
    }

    /// Fine-tunes one task and writes its checkpoint and train log.
    pub fn train(&mut self, task: Task) -> Result<(ModelParams, TrainLog), AppError> {
        let (cfg, prep) = (self.cfg, self.prep);
        let (spec, classes, init_seed, train_cfg, samples, stage) = match task {
            Task::Timing => (
                cfg.timing_model,
                2,
                seeds::TIMING_INIT,
                TrainConfig {
                    seed: cfg.stage_seed(seeds::TIMING_TRAIN),
                    target_class: Some(TimingLabel::Validating.index()),
                    ..cfg.timing_train.clone()
                },
                &prep.timing_samples,
                "timing training",
            ),
            Task::Emotion => (
                cfg.emotion_model,
                NUM_EMOTIONS,
                seeds::EMOTION_INIT,
                TrainConfig { seed: cfg.stage_seed(seeds::EMOTION_TRAIN), ..cfg.emotion_train.clone() },
                &prep.emotion_samples,
                "emotion training",
            ),
        };
        let init = self.init.init(spec, classes, cfg.stage_seed(init_seed))?;
        let (model, log) = train_task(&init, &samples[0], &samples[1], &train_cfg, stage)?;
        let out = cfg.output_dir.as_path();
        let ck = Checkpoint::new(
            &model,
            VOCAB_FILE,
            prep.vocab.fingerprint(),
            Some(TrainSummary::from_log(task.name(), &log)),
        );
        io::save_checkpoint(&out.join(task.checkpoint()), &ck)?;
        io::write_train_log(&out.join(format!("train_logs/{}.jsonl", task.name())), &log)?;
        Ok((model, log))
    }
}

/// In-run random baseline on the given test labels.
pub fn random_baseline(
    cfg: &PipelineConfig,
    prep: &Prepared,
    task: Task,
    test_labels: &[usize],
) -> Result<MetricReport, AppError> {
    let (train, classes, target, offset) = match task {
        Task::Timing => (&prep.timing_samples[0], 2, Some(TimingLabel::Validating.index()), 0),
        Task::Emotion => (&prep.emotion_samples[0], NUM_EMOTIONS, None, 1),
    };
    let train_labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    run_random_baseline(
        test_labels,
        &train_labels,
        classes,
        cfg.baseline,
        target,
        cfg.stage_seed(seeds::BASELINE) + offset,
    )
    .map_err(|e| AppError::runtime("random baseline", e))
}

/// Writes the run directory skeleton: config and vocabulary.
pub fn write_run_header(cfg: &PipelineConfig, prep: &Prepared) -> Result<(), AppError> {
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    io::write_json_pretty(&out.join("config.json"), cfg)?;
    io::save_vocabulary(&out.join(VOCAB_FILE), &prep.vocab)
}

/// Runs every stage and writes the artifacts under `cfg.output_dir`.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<ExperimentReport, AppError> {
    let prep = prepare(cfg)?;
    write_run_header(cfg, &prep)?;
    let out = cfg.output_dir.as_path();

    let mut trainer = Trainer::new(cfg, &prep);
    let (timing_model, timing_log) = trainer.train(Task::Timing)?;
    let (emotion_model, emotion_log) = trainer.train(Task::Emotion)?;
    let mlm = trainer.mlm_log().cloned();

    let (t_records, t_report) = eval_timing(&timing_model, &prep.vocab, &prep.timing[2])?;
    let (e_records, e_eval) = eval_emotion(&emotion_model, &prep.vocab, &prep.emotion[2], cfg)?;
    let t_labels: Vec<usize> = t_records.iter().map(|r| r.label).collect();
    let e_labels: Vec<usize> = e_records.iter().map(|r| r.label.index()).collect();
    let t_base = random_baseline(cfg, &prep, Task::Timing, &t_labels)?;
    let e_base = random_baseline(cfg, &prep, Task::Emotion, &e_labels)?;

    write_predictions(&out.join(PREDICTIONS_FILE), &t_records, &e_records)?;
    let report = ExperimentReport {
        config: cfg.clone(),
        corpus: prep.stats(),
        mlm,
        timing: TaskResult { test: t_report, random_baseline: t_base, train_log: timing_log },
        emotion: TaskResult { test: e_eval.report, random_baseline: e_base, train_log: emotion_log },
        cause: e_eval.cause,
        generation: e_eval.generation,
    };
    io::write_json_pretty(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn write_predictions(
    path: &Path,
    timing: &[TimingPrediction],
    emotion: &[EmotionPrediction],
) -> Result<(), AppError> {
    let lines = timing
        .iter()
        .map(|r| serde_json::to_value(r).expect("serializable"))
        .chain(emotion.iter().map(|r| serde_json::to_value(r).expect("serializable")));
    io::write_jsonl(path, lines)
}

/// Reads a predictions file back into its two record kinds.
pub fn read_predictions(path: &Path) -> Result<(Vec<TimingPrediction>, Vec<EmotionPrediction>), AppError> {
    let values: Vec<serde_json::Value> = io::read_jsonl(path)?;
    let (mut t, mut e) = (Vec::new(), Vec::new());
    for v in values {
        let bad = |err: serde_json::Error| AppError::Data(format!("{}: {err}", path.display()));
        match v.get("task").and_then(|t| t.as_str()) {
            Some("timing") => t.push(serde_json::from_value(v).map_err(bad)?),
            Some("emotion") => e.push(serde_json::from_value(v).map_err(bad)?),
            other => return Err(AppError::Data(format!("unknown prediction task {other:?}"))),
        }
    }
    Ok((t, e))
}

/// Loads the vocabulary and both checkpoints written by a run.
pub fn load_run_models(dir: &Path) -> Result<(Vocabulary, ModelParams, ModelParams), AppError> {
    let vocab = io::load_vocabulary(&dir.join(VOCAB_FILE))?;
    let timing = io::load_model(&dir.join(TIMING_CHECKPOINT), &vocab)?;
    let emotion = io::load_model(&dir.join(EMOTION_CHECKPOINT), &vocab)?;
    Ok((vocab, timing, emotion))
}
