//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line to
//! stdout (uncaptured) and then asserts.

use std::future::IntoFuture;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use valresp::config::CorpusSpec;
use valresp::experiment::{self, ExperimentReport};
use valresp::service::{self, AppState, History, Role, ServiceConfig};
use valresp::PipelineConfig;
use valresp_core::corpus::{annotate_validation, Dialogue, PhraseRuleSet, Source, Speaker, TimingLabel};
use valresp_core::metrics::{bleu, classification_report, cohen_kappa, modified_precision, BLEU_EPSILON};
use valresp_core::neuralnet::{EncoderKind, ModelConfig, ModelParams, Prediction, Sample, PARAM_NAMES};
use valresp_core::pipeline::{
    decide_turn, run_random_baseline, BaselineDistribution, FrozenClock, Models, TurnDecision,
};
use valresp_core::responder::{
    generate_response, EmotionLexicon, HeuristicNounPredicate, ResponderConfig, ResponseBranch,
};
use valresp_core::saliency::{token_scores, CauseCandidate, ScoreAggregation};
use valresp_core::{Emotion, NUM_EMOTIONS};

fn verdict(n: u32, name: &str, result: Result<String, String>) {
    let line = match &result {
        Ok(detail) => format!("criterion {n}: PASS  {name} ({detail})"),
        Err(detail) => format!("criterion {n}: FAIL  {name} ({detail})"),
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    if let Err(detail) = result {
        panic!("criterion {n} failed: {detail}");
    }
}

/// Collects failed checks instead of stopping at the first.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    passed: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what.into());
        }
    }

    fn finish(self, summary: String) -> Result<String, String> {
        if self.failures.is_empty() {
            Ok(format!("{} checks; {summary}", self.passed))
        } else {
            Err(format!(
                "{} of {} checks failed: {}",
                self.failures.len(),
                self.passed + self.failures.len(),
                self.failures.join("; ")
            ))
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_model(rng: &mut StdRng) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: rng.gen_range(10..24),
        embed_dim: rng.gen_range(2..7),
        encoder: if rng.gen_bool(0.5) { EncoderKind::SingleHeadAttention } else { EncoderKind::MeanPool },
        hidden_dim: if rng.gen_bool(0.5) { 0 } else { rng.gen_range(2..6) },
        num_classes: if rng.gen_bool(0.5) { 2 } else { NUM_EMOTIONS },
        max_len: 8,
        seed: rng.gen(),
    };
    let mut p = ModelParams::init(&cfg).unwrap();
    // Larger weights than the initializer's keep the check away from the
    // near-linear regime.
    for name in PARAM_NAMES {
        for x in p.tensor_mut(name).unwrap().iter_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    p.pin_pad();
    p
}

/// Non-reserved token ids, distinct when `distinct` is set.
fn random_ids(rng: &mut StdRng, p: &ModelParams, distinct: bool) -> Vec<u32> {
    let first = valresp_core::text::SEP_ID + 1;
    let pool: Vec<u32> = (first..p.config.vocab_size as u32).collect();
    let len = rng.gen_range(1..=p.config.max_len.min(pool.len()));
    if distinct {
        pool.choose_multiple(rng, len).copied().collect()
    } else {
        (0..len).map(|_| *pool.choose(rng).unwrap()).collect()
    }
}

fn mean_cross_entropy(p: &ModelParams, batch: &[Sample]) -> f64 {
    let total: f64 = batch.iter().map(|s| -p.forward(&s.ids).unwrap().distribution[s.label].ln()).sum();
    total / batch.len() as f64
}

#[test]
fn criterion_1_gradient_oracle() {
    const H: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(20_241_001);
    let (mut worst_param, mut worst_embed) = (0.0f64, 0.0f64);
    let (mut n_param, mut n_embed) = (0usize, 0usize);
    let models = 120;
    for _ in 0..models {
        let p = random_model(&mut rng);
        let batch: Vec<Sample> = (0..rng.gen_range(1..4))
            .map(|_| Sample { ids: random_ids(&mut rng, &p, false), label: rng.gen_range(0..p.config.num_classes) })
            .collect();
        let (_, grads) = p.loss_and_gradients(&batch).unwrap();
        for name in PARAM_NAMES {
            let len = p.tensor(name).unwrap().len();
            for j in 0..len {
                let mut plus = p.clone();
                plus.tensor_mut(name).unwrap()[j] += H;
                let mut minus = p.clone();
                minus.tensor_mut(name).unwrap()[j] -= H;
                let numeric = (mean_cross_entropy(&plus, &batch) - mean_cross_entropy(&minus, &batch)) / (2.0 * H);
                worst_param = worst_param.max(rel_err(grads.tensor(name).unwrap()[j], numeric));
                n_param += 1;
            }
        }

        // Distinct ids make a row of E the input vector of exactly one position.
        let ids = random_ids(&mut rng, &p, true);
        let class = rng.gen_range(0..p.config.num_classes);
        let analytic = p.input_embedding_gradient(&ids, class).unwrap();
        let d = p.config.embed_dim;
        for (&id, row) in ids.iter().zip(&analytic) {
            for (j, &a) in row.iter().enumerate() {
                let at = id as usize * d + j;
                let mut plus = p.clone();
                plus.tensor_mut("embedding").unwrap()[at] += H;
                let mut minus = p.clone();
                minus.tensor_mut("embedding").unwrap()[at] -= H;
                let numeric = (plus.forward(&ids).unwrap().logits[class] - minus.forward(&ids).unwrap().logits[class])
                    / (2.0 * H);
                worst_embed = worst_embed.max(rel_err(a, numeric));
                n_embed += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let mut c = Checks::default();
    c.check(worst_param < 1e-3, format!("parameter gradient rel. error {worst_param:.2e} >= 1e-3"));
    c.check(worst_embed < 1e-3, format!("embedding gradient rel. error {worst_embed:.2e} >= 1e-3"));
    c.check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}, limit 30 s"));
    verdict(
        1,
        "gradient oracle",
        c.finish(format!(
            "{models} models, {n_param} parameter and {n_embed} embedding components, worst rel. error {:.2e} / {:.2e}, {:.1} s",
            worst_param,
            worst_embed,
            elapsed.as_secs_f64()
        )),
    );
}

#[test]
fn criterion_2_saliency_identity() {
    const H: f64 = 1e-4;
    let mut rng = StdRng::seed_from_u64(20_241_002);
    let mut worst = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let p = random_model(&mut rng);
        let ids = random_ids(&mut rng, &p, false);
        let class = p.forward(&ids).unwrap().label;
        let total: f64 = token_scores(&p, &ids, class, ScoreAggregation::Signed).unwrap().scores.iter().sum();
        let scaled = |alpha: f64| {
            let mut q = p.clone();
            q.tensor_mut("embedding").unwrap().iter_mut().for_each(|x| *x *= alpha);
            q.forward(&ids).unwrap().logits[class]
        };
        let numeric = (scaled(1.0 + H) - scaled(1.0 - H)) / (2.0 * H);
        worst = worst.max(rel_err(total, numeric));
    }
    let ok = worst < 1e-4;
    let detail = format!("{cases} cases, worst rel. error {worst:.2e}, limit 1e-4");
    verdict(2, "saliency identity", if ok { Ok(detail) } else { Err(detail) });
}

/// The response labels of two-turn dialogues, in order.
fn response_labels(rules: &PhraseRuleSet, responses: &[&str]) -> Vec<TimingLabel> {
    responses
        .iter()
        .map(|r| {
            let d = Dialogue::new(
                "fixture",
                Source::TextCorpus,
                [
                    (Speaker::A, "昨日の夜、ひとりで留守番してたら物音がしてさ".to_owned()),
                    (Speaker::B, (*r).to_owned()),
                ],
            );
            let ex = annotate_validation(&d, rules).unwrap();
            assert_eq!(ex.len(), 1);
            ex[0].timing_label.unwrap()
        })
        .collect()
}

const NON_VALIDATING: [&str; 20] = [
    "へえ、そうなんだ",
    "それでどうなったの？",
    "明日は晴れるらしいよ",
    "ところでお昼は何食べた？",
    "知らなかった",
    "本当に？",
    "ふーん",
    "いつ行くの？",
    "写真を見せて",
    "私も昨日行ったよ",
    "次はどこに行く？",
    "それってどういう意味？",
    "天気がいいね",
    "そうなんですか",
    "もう一回言って",
    "今何時？",
    "駅まで歩こうか",
    "お腹すいた",
    "電車が遅れてるみたい",
    "宿題は終わった？",
];

#[test]
fn criterion_3_annotation_fidelity() {
    let rules = PhraseRuleSet::default();
    let validating = ["その気持ちわかるわー", "分かる", "確かにね", "それは怖いですね"];
    let mut c = Checks::default();
    for (r, l) in validating.iter().zip(response_labels(&rules, &validating)) {
        c.check(l == TimingLabel::Validating, format!("{r:?} labeled {l:?}"));
    }
    for (r, l) in NON_VALIDATING.iter().zip(response_labels(&rules, &NON_VALIDATING)) {
        c.check(l == TimingLabel::NonValidating, format!("{r:?} labeled {l:?}"));
    }
    verdict(3, "annotation fidelity", c.finish("4 validating, 20 non-validating, exact".into()));
}

fn prediction(emotion: Emotion, confidence: f64) -> Prediction {
    let mut distribution = vec![(1.0 - confidence) / 7.0; NUM_EMOTIONS];
    distribution[emotion.index()] = confidence;
    Prediction { label: emotion.index(), confidence, distribution, logits: vec![0.0; NUM_EMOTIONS] }
}

fn candidate(phrase: &str, score: f64) -> CauseCandidate {
    CauseCandidate { phrase: phrase.into(), tokens: vec![0], score, span: (0, phrase.len()) }
}

/// First utterance in a fixed list whose hashed marker is `marker`.
fn utterance_with_marker(lex: &EmotionLexicon, marker: &str) -> String {
    (0..100).map(|i| format!("発話{i}")).find(|u| lex.marker_for(u) == marker).expect("both markers occur")
}

#[test]
fn criterion_4_template_exactness() {
    let lex = EmotionLexicon::default();
    let cfg = ResponderConfig::default();
    let nouns = HeuristicNounPredicate::default();
    let tashika = utterance_with_marker(&lex, "確かに");
    let wakaru = utterance_with_marker(&lex, "分かる");
    let respond = |lex: &EmotionLexicon, u: &str, e, conf, causes: &[CauseCandidate]| {
        generate_response(u, &prediction(e, conf), causes, lex, &cfg, &nouns).unwrap()
    };
    let mut c = Checks::default();
    let mut expect = |(text, d): (String, valresp_core::responder::ResponseDecision), want: &str, branch| {
        c.check(
            text == want && d.branch == branch,
            format!("got {text:?} / {:?}, want {want:?} / {branch:?}", d.branch),
        );
    };
    expect(
        respond(&lex, &tashika, Emotion::Surprise, 0.97, &[]),
        "確かに、それはびっくりですね",
        ResponseBranch::MarkerPlusEmotion,
    );
    expect(
        respond(&lex, &wakaru, Emotion::Fear, 0.99, &[candidate("は", 3.0), candidate("蛾", 1.0)]),
        "分かる、蛾は怖いですね",
        ResponseBranch::MarkerPlusCauseEmotion,
    );
    expect(
        respond(&lex, &tashika, Emotion::Joy, 0.60, &[candidate("温泉", 1.0)]),
        "確かに",
        ResponseBranch::MarkerOnly,
    );
    expect(respond(&lex, &tashika, Emotion::Fear, 0.95, &[candidate("蛾", 1.0)]), "確かに", ResponseBranch::MarkerOnly);
    expect(
        respond(&lex, &tashika, Emotion::Fear, 0.95f64.next_up(), &[candidate("蛾", 1.0)]),
        "確かに、蛾は怖いですね",
        ResponseBranch::MarkerPlusCauseEmotion,
    );
    let bang = EmotionLexicon { separator: "！".into(), sentence_end: "！".into(), ..lex.clone() };
    expect(
        respond(&bang, &tashika, Emotion::Surprise, 0.97, &[]),
        "確かに！それはびっくりですね！",
        ResponseBranch::MarkerPlusEmotion,
    );
    verdict(4, "template exactness", c.finish("three branches, punctuation variant, 0.95 boundary".into()));
}

#[test]
fn criterion_6_metric_oracles() {
    let mut c = Checks::default();
    let r = classification_report(&[1, 1, 0, 0], &[1, 0, 0, 0], Some(1)).unwrap();
    c.check((r.macro_avg.f1 - 11.0 / 15.0).abs() <= 1e-9, format!("macro-F1 {}", r.macro_avg.f1));
    let k = cohen_kappa(&['A', 'A', 'B', 'B'], &['A', 'B', 'B', 'B']).unwrap();
    c.check((k - 0.5).abs() <= 1e-9, format!("kappa {k}"));
    let words = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
    let sent = words("the cat is on the mat");
    let b = bleu(&sent, &sent, 4, BLEU_EPSILON).unwrap();
    c.check(b == 1.0, format!("BLEU identity {b}"));
    let (clipped, total) = modified_precision(&words("the the the the the the the"), &sent, 1);
    c.check((clipped, total) == (2, 7), format!("clipped unigram {clipped}/{total}"));

    let n = 10_000;
    let mut rng = StdRng::seed_from_u64(20_241_006);
    let binary: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(0.29))).collect();
    let positive_rate = binary.iter().sum::<usize>() as f64 / n as f64;
    let mut precisions = Vec::new();
    for seed in 0..5 {
        let rep = run_random_baseline(&binary, &binary, 2, BaselineDistribution::Empirical, Some(1), seed).unwrap();
        precisions.push(rep.target.unwrap().precision);
    }
    let worst_p = precisions.iter().map(|p| (p - positive_rate).abs()).fold(0.0, f64::max);
    c.check(worst_p <= 0.03, format!("target precision off by {worst_p:.4}"));
    let eight: Vec<usize> = (0..n).map(|_| rng.gen_range(0..NUM_EMOTIONS)).collect();
    let mut worst_acc = 0.0f64;
    for dist in [BaselineDistribution::Empirical, BaselineDistribution::Uniform] {
        for seed in 0..5 {
            let rep = run_random_baseline(&eight, &eight, NUM_EMOTIONS, dist, None, seed).unwrap();
            worst_acc = worst_acc.max((rep.accuracy - 0.125).abs());
        }
    }
    c.check(worst_acc <= 0.02, format!("8-class accuracy off by {worst_acc:.4}"));
    verdict(
        6,
        "metric oracles",
        c.finish(format!(
            "macro-F1 {:.12}, kappa {k}, BLEU {b}, unigram {clipped}/{total}, precision dev {worst_p:.4}, accuracy dev {worst_acc:.4}",
            r.macro_avg.f1
        )),
    );
}

/// One timed `pipeline` run through the CLI, shared by the end-to-end
/// criteria.
struct Run {
    dir: PathBuf,
    elapsed: Duration,
    report: ExperimentReport,
    predictions: Vec<u8>,
    report_bytes: Vec<u8>,
    _tmp: tempfile::TempDir,
}

fn cli_pipeline(out: &Path) -> Duration {
    let start = Instant::now();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_valresp"))
        .args(["--seed", "42", "--out", out.to_str().unwrap(), "pipeline"])
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "pipeline exited with {status}");
    start.elapsed()
}

fn shared_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let elapsed = cli_pipeline(&dir);
        let report_bytes = std::fs::read(dir.join(experiment::REPORT_FILE)).unwrap();
        let report = serde_json::from_slice(&report_bytes).unwrap();
        let predictions = std::fs::read(dir.join(experiment::PREDICTIONS_FILE)).unwrap();
        Run { dir, elapsed, report, predictions, report_bytes, _tmp: tmp }
    })
}

#[test]
fn criterion_5_synthetic_end_to_end() {
    let run = shared_run();
    let r = &run.report;
    let mut c = Checks::default();
    match &r.config.corpus {
        CorpusSpec::Synthetic(s) => {
            c.check(s.n_dialogues == 2000, format!("{} dialogues", s.n_dialogues));
            c.check(s.validating_rate == 0.29, format!("validating rate {}", s.validating_rate));
            c.check(s.keywords.len() == 8, format!("{} keyword emotions", s.keywords.len()));
        }
        CorpusSpec::Files(_) => c.check(false, "corpus is not synthetic"),
    }
    c.check(r.config.seed == 42, format!("seed {}", r.config.seed));
    let f1 = r.timing.test.macro_avg.f1;
    let base = r.timing.random_baseline.macro_avg.f1;
    c.check(f1 >= 0.90, format!("timing macro-F1 {f1:.4} < 0.90"));
    c.check(f1 >= base + 0.25, format!("timing macro-F1 {f1:.4} < baseline {base:.4} + 0.25"));
    let acc = r.emotion.test.accuracy;
    c.check(acc >= 0.95, format!("emotion accuracy {acc:.4} < 0.95"));
    let cause = r.cause.accuracy.unwrap_or(0.0);
    c.check(r.cause.top_k == 3, format!("cause top_k {}", r.cause.top_k));
    c.check(cause >= 0.70, format!("cause top-3 accuracy {cause:.4} < 0.70"));
    c.check(run.elapsed <= Duration::from_secs(300), format!("runtime {:?} > 5 min", run.elapsed));
    verdict(
        5,
        "synthetic end-to-end",
        c.finish(format!(
            "timing macro-F1 {f1:.4} vs baseline {base:.4}, emotion accuracy {acc:.4}, cause top-3 {cause:.4} over {} examples, {:.1} s",
            r.cause.evaluated,
            run.elapsed.as_secs_f64()
        )),
    );
}

#[test]
fn criterion_7_determinism() {
    let run = shared_run();
    let mut c = Checks::default();

    // A second full run into a fresh directory with the same config.
    let tmp = tempfile::tempdir().unwrap();
    let again = tmp.path().join("run");
    cli_pipeline(&again);
    let predictions = std::fs::read(again.join(experiment::PREDICTIONS_FILE)).unwrap();
    c.check(predictions == run.predictions, "predictions files differ");
    let mut report: ExperimentReport =
        serde_json::from_slice(&std::fs::read(again.join(experiment::REPORT_FILE)).unwrap()).unwrap();
    c.check(report.config.output_dir == again, "second report names its own directory");
    report.config.output_dir = run.dir.clone();
    let mut bytes = serde_json::to_vec_pretty(&report).unwrap();
    bytes.push(b'\n');
    c.check(
        bytes == run.report_bytes || serde_json::to_vec_pretty(&report).unwrap() == run.report_bytes,
        "reports differ beyond the output directory",
    );
    for f in [experiment::TIMING_CHECKPOINT, experiment::EMOTION_CHECKPOINT, experiment::VOCAB_FILE] {
        c.check(
            std::fs::read(again.join(f)).unwrap() == std::fs::read(run.dir.join(f)).unwrap(),
            format!("{f} differs"),
        );
    }

    // Reloaded checkpoints reproduce the predictions file bit for bit.
    let cfg = PipelineConfig::load(&run.dir.join("config.json")).unwrap();
    let prep = experiment::prepare(&cfg).unwrap();
    let (vocab, timing, emotion) = experiment::load_run_models(&run.dir).unwrap();
    let (t, _) = experiment::eval_timing(&timing, &vocab, &prep.timing[2]).unwrap();
    let (e, _) = experiment::eval_emotion(&emotion, &vocab, &prep.emotion[2], &cfg).unwrap();
    let replay = tmp.path().join("replay.jsonl");
    experiment::write_predictions(&replay, &t, &e).unwrap();
    c.check(std::fs::read(&replay).unwrap() == run.predictions, "reloaded checkpoints predict differently");
    verdict(
        7,
        "determinism",
        c.finish(format!("{} prediction bytes identical across runs and after reload", run.predictions.len())),
    );
}

#[test]
fn criterion_8_mlm_gate() {
    let run = shared_run();
    let mut c = Checks::default();
    let Some(log) = &run.report.mlm else {
        verdict(8, "MLM gate", Err("no MLM log in the report".into()));
        return;
    };
    let epochs = run.report.config.mlm.train.max_epochs;
    let ratio = log.final_loss / log.initial_loss;
    c.check(epochs <= 5, format!("{epochs} epochs > 5"));
    c.check(log.epoch_losses.len() <= 5, format!("{} epoch evaluations", log.epoch_losses.len()));
    c.check(ratio <= 0.5, format!("final/initial {ratio:.4} > 0.5"));
    verdict(
        8,
        "MLM gate",
        c.finish(format!(
            "loss {:.4} -> {:.4} (ratio {ratio:.4}) in {epochs} epochs",
            log.initial_loss, log.final_loss
        )),
    );
}

async fn post(client: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = client.post(url).json(&body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

fn without_latency(mut d: TurnDecision) -> TurnDecision {
    d.latency_ms = Default::default();
    d
}

fn serial(models: &Models, texts: &[&str]) -> Vec<TurnDecision> {
    let mut history: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for text in texts {
        let refs: Vec<&str> = history.iter().map(String::as_str).collect();
        let d = decide_turn(models, &refs, text, &FrozenClock).unwrap();
        history.push((*text).to_owned());
        history.extend(d.response.clone());
        out.push(without_latency(d));
    }
    out
}

const FEAR: &str = "実は幽霊のことが頭からずっと消えなくてさ";
const NEUTRAL: &str = "お昼はパスタを食べたよ";
const TRAFFIC: [&str; 6] = [
    "ねえ聞いて、地震のことでもう心がざわざわしてるの",
    "今週は先生についての記事を読んだよ",
    FEAR,
    NEUTRAL,
    "雷の話を同僚から聞いたんだけど",
    "失恋のせいで胸がいっぱいになっちゃって",
];

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_9_service_contract() {
    let run = tokio::task::spawn_blocking(shared_run).await.unwrap();
    let cfg = PipelineConfig::load(&run.dir.join("config.json")).unwrap();
    let svc = ServiceConfig::for_run_dir(&run.dir);
    let (models, ids) = service::load_models(&svc, cfg.lexicon.clone(), cfg.settings).unwrap();
    let state = AppState::new(svc).unwrap();
    state.install(models.clone(), ids);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(axum::serve(listener, service::router(Arc::clone(&state))).into_future());
    let client = reqwest::Client::new();
    let mut c = Checks::default();

    let (status, created) = post(&client, format!("{base}/api/session"), json!({})).await;
    c.check(status == 200, format!("create returned {status}"));
    let id = created["session_id"].as_str().unwrap_or_default().to_owned();
    let msg = format!("{base}/api/session/{id}/message");

    let (status, fear) = post(&client, msg.clone(), json!({ "text": FEAR })).await;
    c.check(status == 200, format!("fear message returned {status}"));
    c.check(fear["validate"] == true, format!("fear message validate = {}", fear["validate"]));
    c.check(fear["emotion"] == "fear", format!("fear message emotion = {}", fear["emotion"]));
    c.check(fear["response"].as_str().is_some_and(|r| !r.is_empty()), "fear message has no response");
    for key in ["timing_confidence", "emotion_confidence", "causes", "branch", "latency_ms"] {
        c.check(fear.get(key).is_some(), format!("missing field {key}"));
    }

    let (status, neutral) = post(&client, msg.clone(), json!({ "text": NEUTRAL })).await;
    c.check(status == 200, format!("neutral message returned {status}"));
    c.check(neutral["validate"] == false, format!("neutral message validate = {}", neutral["validate"]));
    c.check(neutral["response"].is_null(), format!("neutral message response = {}", neutral["response"]));

    let (status, _) = post(&client, msg.clone(), json!({ "text": "怖".repeat(2000) })).await;
    c.check((400..500).contains(&status), format!("oversized message returned {status}"));

    let h: History = client.get(format!("{base}/api/session/{id}/history")).send().await.unwrap().json().await.unwrap();
    let roles: Vec<Role> = h.turns.iter().map(|t| t.role).collect();
    c.check(roles == [Role::User, Role::System, Role::User], format!("history roles {roles:?}"));
    c.check(h.decisions.len() == 2, format!("{} decisions recorded", h.decisions.len()));

    // Interleaved traffic on two sessions equals serial traffic per session.
    let a = post(&client, format!("{base}/api/session"), json!({})).await.1["session_id"].as_str().unwrap().to_owned();
    let b = post(&client, format!("{base}/api/session"), json!({})).await.1["session_id"].as_str().unwrap().to_owned();
    let script_a: Vec<&str> = TRAFFIC.to_vec();
    let script_b: Vec<&str> = TRAFFIC.iter().rev().copied().collect();
    let (mut got_a, mut got_b) = (Vec::new(), Vec::new());
    for k in 0..TRAFFIC.len() {
        let (ra, rb) = tokio::join!(
            post(&client, format!("{base}/api/session/{a}/message"), json!({ "text": script_a[k] })),
            post(&client, format!("{base}/api/session/{b}/message"), json!({ "text": script_b[k] }))
        );
        got_a.push(without_latency(serde_json::from_value(ra.1).unwrap()));
        got_b.push(without_latency(serde_json::from_value(rb.1).unwrap()));
    }
    c.check(got_a == serial(&models, &script_a), "session A differs from serial replay");
    c.check(got_b == serial(&models, &script_b), "session B differs from serial replay");
    let validated = got_a.iter().chain(&got_b).filter(|d| d.validate).count();

    verdict(
        9,
        "service contract",
        c.finish(format!(
            "fear -> {} / {}, neutral -> validate=false, oversized -> 4xx, interleaved 2x{} turns match serial ({validated} validated)",
            fear["emotion"],
            fear["response"],
            TRAFFIC.len()
        )),
    );
}

#[test]
fn report_matches_its_predictions_file() {
    let run = shared_run();
    let (t, e) = experiment::read_predictions(&run.dir.join(experiment::PREDICTIONS_FILE)).unwrap();
    assert_eq!(experiment::timing_report(&t).unwrap(), run.report.timing.test);
    let summary = experiment::emotion_summary(&e, run.report.config.settings.top_k).unwrap();
    assert_eq!(summary.report, run.report.emotion.test);
    assert_eq!(summary.cause, run.report.cause);
    assert_eq!(summary.generation, run.report.generation);
    let rules = run.report.config.rules.compile().unwrap();
    assert!(e.iter().all(|r| rules.label(&r.response) == TimingLabel::Validating));
    assert!(e.iter().all(|r| r.cause_matched.is_none() || (r.label == r.prediction && r.gold_cause.is_some())));
}
