use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamW, ModelError, ModelParams, Sample};
use crate::metrics::classification_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    MacroF1,
    MacroPrecision,
    TargetPrecision,
    TargetF1,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_interval_steps: usize,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub selection_metric: SelectionMetric,
    /// Positive class for target-class metrics.
    pub target_class: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::timing()
    }
}

impl TrainConfig {
    pub fn timing() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 64,
            max_epochs: 20,
            eval_interval_steps: 100,
            weight_decay: 0.01,
            early_stop_patience: 5,
            selection_metric: SelectionMetric::MacroF1,
            target_class: Some(1),
            seed: 0,
        }
    }

    pub fn emotion() -> Self {
        TrainConfig { learning_rate: 3e-5, target_class: None, ..TrainConfig::timing() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidTrainConfig(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_interval_steps == 0 {
            return bad("batch_size, max_epochs and eval_interval_steps must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if matches!(self.selection_metric, SelectionMetric::TargetPrecision | SelectionMetric::TargetF1)
            && self.target_class.is_none()
        {
            return bad("target-class selection metric needs target_class");
        }
        Ok(())
    }
}

/// Dev-set scores from one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DevMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub target_precision: Option<f64>,
    pub target_recall: Option<f64>,
    pub target_f1: Option<f64>,
}

impl DevMetrics {
    pub fn select(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::MacroF1 => self.macro_f1,
            SelectionMetric::MacroPrecision => self.macro_precision,
            SelectionMetric::TargetPrecision => self.target_precision.unwrap_or(0.0),
            SelectionMetric::TargetF1 => self.target_f1.unwrap_or(0.0),
            SelectionMetric::Accuracy => self.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss over the steps since the previous evaluation.
    pub loss: Option<f64>,
    pub dev_metrics: DevMetrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub evals: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_score: f64,
    pub steps: usize,
    pub epochs: usize,
    pub stopped_early: bool,
}

/// Forward pass over `dev` and the resulting scores.
pub fn evaluate(params: &ModelParams, dev: &[Sample], target_class: Option<usize>) -> Result<DevMetrics, ModelError> {
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let mut labels = Vec::with_capacity(dev.len());
    let mut preds = Vec::with_capacity(dev.len());
    let mut loss = 0.0;
    for s in dev {
        let p = params.forward(&s.ids)?;
        let prob = p
            .distribution
            .get(s.label)
            .copied()
            .ok_or(ModelError::LabelOutOfRange { label: s.label, num_classes: p.distribution.len() })?;
        loss -= libm::log(prob.max(f64::MIN_POSITIVE));
        labels.push(s.label);
        preds.push(p.label);
    }
    let report = classification_report(&labels, &preds, target_class).expect("non-empty, equal lengths");
    Ok(DevMetrics {
        loss: loss / dev.len() as f64,
        accuracy: report.accuracy,
        macro_precision: report.macro_avg.precision,
        macro_recall: report.macro_avg.recall,
        macro_f1: report.macro_avg.f1,
        target_precision: report.target.map(|t| t.precision),
        target_recall: report.target.map(|t| t.recall),
        target_f1: report.target.map(|t| t.f1),
    })
}

pub fn train_classifier(
    params: &ModelParams,
    train: &[Sample],
    dev: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog), ModelError> {
    let target = cfg.target_class;
    train_classifier_with(params, train, dev, cfg, |p, d| evaluate(p, d, target))
}

/// [`train_classifier`] with a caller-supplied dev evaluator.
pub fn train_classifier_with<F>(
    params: &ModelParams,
    train: &[Sample],
    dev: &[Sample],
    cfg: &TrainConfig,
    mut evaluator: F,
) -> Result<(ModelParams, TrainLog), ModelError>
where
    F: FnMut(&ModelParams, &[Sample]) -> Result<DevMetrics, ModelError>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let mut current = params.clone();
    let mut opt = AdamW::new(&current, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let first = evaluator(&current, dev)?;
    let mut log = TrainLog {
        evals: alloc::vec![EvalRecord { step: 0, epoch: 0, loss: None, dev_metrics: first }],
        best_step: 0,
        best_score: first.select(cfg.selection_metric),
        ..TrainLog::default()
    };
    let mut best = current.clone();
    let mut stale = 0;
    let mut step = 0;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    let mut record = |current: &ModelParams,
                      step: usize,
                      epoch: usize,
                      loss: Option<f64>,
                      log: &mut TrainLog,
                      best: &mut ModelParams,
                      stale: &mut usize|
     -> Result<bool, ModelError> {
        let m = evaluator(current, dev)?;
        let score = m.select(cfg.selection_metric);
        log.evals.push(EvalRecord { step, epoch, loss, dev_metrics: m });
        if score > log.best_score {
            log.best_score = score;
            log.best_step = step;
            *best = current.clone();
            *stale = 0;
        } else {
            *stale += 1;
        }
        Ok(*stale >= cfg.early_stop_patience)
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        log.epochs = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = current.loss_and_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { step });
            }
            opt.step(&mut current, &grads);
            step += 1;
            loss_sum += loss;
            loss_n += 1;
            if step % cfg.eval_interval_steps == 0 {
                let mean = loss_sum / loss_n as f64;
                (loss_sum, loss_n) = (0.0, 0);
                if record(&current, step, epoch, Some(mean), &mut log, &mut best, &mut stale)? {
                    log.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    if !log.stopped_early && log.evals.last().map(|e| e.step) != Some(step) {
        let mean = loss_sum / loss_n.max(1) as f64;
        let epoch = log.epochs;
        record(&current, step, epoch, Some(mean), &mut log, &mut best, &mut stale)?;
    }
    log.steps = step;
    Ok((best, log))
}
