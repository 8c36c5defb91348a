//! Finetuning loop, evaluation and the zero-shot / transfer entry points.

pub mod checkpoint;
pub mod loss;
pub mod schedule;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CrystalRecord, DatasetSplit, Task};
use crate::labelscale::{LabelScaler, ScaleError, ScaleMethod};
use crate::metrics::{mae, roc_auc, MetricError, MetricName, MetricsReport};
use crate::model::{EncoderConfig, EncoderSource, HeadTask, Model, ModelError, Pooling, PredictionHead};
use crate::parallel::Execution;
use crate::tokenizer::{pad_batch, TokenizedExample, TokenizerError};
use crate::util::mix_seed;

pub use checkpoint::{adapt_encoder, Checkpoint, CheckpointError, CheckpointMeta, Pipeline};
pub use schedule::{onecycle_lr, Adam, OneCycle, ScheduleError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label scaling: {0}")]
    Scale(#[from] ScaleError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64, loss: f64 },
    #[error("checkpoint was trained for {checkpoint} but {requested} was requested")]
    TaskMismatch { checkpoint: Task, requested: Task },
    #[error("no {0} records carry the task label")]
    NoLabels(&'static str),
}

impl TrainError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
        move |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Keep `best` and `last` only.
    #[default]
    BestAndLast,
    /// Also keep `epoch-N` for every epoch.
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub lr_max: f64,
    pub epochs: usize,
    pub max_length: usize,
    pub scaler_method: ScaleMethod,
    pub seed: u64,
    pub init_from: Option<PathBuf>,
    pub onecycle: OneCycle,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub retention: Retention,
    #[serde(skip)]
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        TrainConfig {
            task,
            batch_size: 64,
            lr_max: 1e-3,
            epochs: 200,
            max_length: 888,
            scaler_method: ScaleMethod::ZScore,
            seed: 0,
            init_from: None,
            onecycle: OneCycle::default(),
            grad_clip: None,
            retention: Retention::BestAndLast,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_length == 0 {
            return Err(TrainError::Config("max_length must be positive".into()));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(TrainError::Config(format!("lr_max must be positive, got {}", self.lr_max)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(TrainError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.onecycle.validate()?;
        Ok(())
    }

    /// Classification trains on raw 0/1 targets whatever the scaler setting.
    pub fn effective_scaler(&self) -> ScaleMethod {
        if self.task.is_classification() {
            ScaleMethod::Identity
        } else {
            self.scaler_method
        }
    }
}

pub fn head_task(task: Task) -> HeadTask {
    if task.is_classification() {
        HeadTask::BinaryClassification
    } else {
        HeadTask::Regression
    }
}

pub fn metric_for(task: Task) -> MetricName {
    if task.is_classification() {
        MetricName::Auc
    } else {
        MetricName::Mae
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub current_lr: f64,
    /// Validation metric of the model before any update.
    pub initial_val_metric: f64,
    pub best_val_metric: f64,
    /// 0 when no epoch improved on (or ran after) initialisation.
    pub best_epoch: usize,
    pub metric_name: MetricName,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    /// Extremum of the recorded history, or the initial metric when empty.
    pub fn history_extremum(&self) -> f64 {
        let vals = self.history.iter().map(|r| r.val_metric);
        match self.metric_name {
            MetricName::Mae => vals.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v)))),
            MetricName::Auc => vals.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v)))),
        }
        .unwrap_or(self.initial_val_metric)
    }

    pub fn history_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_metric\tlr\n");
        for r in &self.history {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.train_loss, r.val_metric, r.lr));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub state: TrainState,
}

/// Tokenized examples with their labels; records lacking the label are
/// counted in `skipped`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub examples: Vec<TokenizedExample>,
    pub labels: Vec<f64>,
    pub skipped: usize,
}

pub fn prepare_records(pipeline: &Pipeline, records: &[CrystalRecord], task: Task, exec: Execution) -> Prepared {
    let labelled: Vec<(&CrystalRecord, f64)> =
        records.iter().filter_map(|r| r.label(task).map(|y| (r, y))).collect();
    let examples = exec.map(&labelled, |(r, _)| pipeline.encode(&r.description));
    Prepared {
        examples,
        labels: labelled.iter().map(|(_, y)| *y).collect(),
        skipped: records.len() - labelled.len(),
    }
}

const EVAL_BATCH: usize = 64;

/// Raw head outputs for every example, batched and padded per batch.
fn model_outputs(model: &Model, examples: &[TokenizedExample], exec: Execution) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let len = chunk.iter().map(|e| e.ids.len()).max().unwrap_or(0).max(1);
        let batch = pad_batch(chunk, len)?;
        out.extend(model.outputs(&batch, exec)?);
    }
    Ok(out)
}

/// Predictions in label units: denormalized values for regression,
/// probabilities for classification.
pub fn predict_examples(
    model: &Model,
    scaler: &LabelScaler,
    examples: &[TokenizedExample],
    exec: Execution,
) -> Result<Vec<f64>, TrainError> {
    let raw = model_outputs(model, examples, exec)?;
    Ok(match model.task() {
        HeadTask::Regression => raw.into_iter().map(|o| scaler.inverse(o)).collect(),
        HeadTask::BinaryClassification => raw.into_iter().map(crate::model::probability).collect(),
    })
}

fn score(metric: MetricName, preds: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    Ok(match metric {
        MetricName::Mae => mae(preds, labels)?,
        MetricName::Auc => roc_auc(preds, labels)?,
    })
}

fn report(task: Task, preds: &[f64], labels: &[f64], skipped: usize) -> Result<MetricsReport, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::NoLabels("evaluation"));
    }
    let metric_name = metric_for(task);
    Ok(MetricsReport {
        task: task.name().to_string(),
        metric_name,
        value: score(metric_name, preds, labels)?,
        n: labels.len(),
        units: task.units().to_string(),
        mean_prediction: preds.iter().sum::<f64>() / preds.len() as f64,
        skipped,
        checkpoint_hash: None,
        split_manifest_hash: None,
        notes: Vec::new(),
    })
}

/// Denormalized MAE (regression) or ROC-AUC (classification) of `checkpoint`
/// on `records`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    records: &[CrystalRecord],
    task: Task,
    exec: Execution,
) -> Result<MetricsReport, TrainError> {
    if checkpoint.meta.task != task {
        return Err(TrainError::TaskMismatch {
            checkpoint: checkpoint.meta.task,
            requested: task,
        });
    }
    let prepared = prepare_records(&checkpoint.pipeline, records, task, exec);
    let preds = predict_examples(&checkpoint.model, &checkpoint.scaler, &prepared.examples, exec)?;
    let mut r = report(task, &preds, &prepared.labels, prepared.skipped)?;
    r.checkpoint_hash = Some(checkpoint.hash());
    Ok(r)
}

/// Evaluates on `task` with no gradient updates. A checkpoint already
/// trained for `task` is used as is; otherwise its encoder is paired with a
/// freshly initialised head, and regression outputs are mapped back through
/// a scaler fitted on `reference_labels` (identity when none are given).
pub fn zero_shot(
    source: &Checkpoint,
    records: &[CrystalRecord],
    task: Task,
    reference_labels: Option<&[f64]>,
    head_seed: u64,
    exec: Execution,
) -> Result<MetricsReport, TrainError> {
    if source.meta.task == task {
        let mut r = evaluate(source, records, task, exec)?;
        r.notes.push(format!("zero-shot head: checkpoint head ({})", source.meta.head_init));
        return Ok(r);
    }
    let mut model = source.model.clone();
    model.head = PredictionHead::random(model.config.hidden_size, head_task(task), head_seed);
    let scaler = match (reference_labels, task.is_classification()) {
        (Some(ys), false) => LabelScaler::fit(ys, ScaleMethod::ZScore)?,
        _ => LabelScaler::identity(),
    };
    let prepared = prepare_records(&source.pipeline, records, task, exec);
    let preds = predict_examples(&model, &scaler, &prepared.examples, exec)?;
    let mut r = report(task, &preds, &prepared.labels, prepared.skipped)?;
    r.checkpoint_hash = Some(source.hash());
    r.notes.push(format!(
        "zero-shot head: random uniform init (seed {head_seed}); encoder from a {} checkpoint",
        source.meta.task.name()
    ));
    r.notes
        .push("the head state for zero-shot rows is not specified by the reference setup".to_string());
    Ok(r)
}

/// Builds the initial model for `config`, honouring a pretrained source.
pub fn build_model(
    encoder: &EncoderConfig,
    pipeline: &Pipeline,
    task: Task,
    seed: u64,
) -> Result<(Model, String), TrainError> {
    let mut cfg = encoder.clone();
    cfg.vocab_size = pipeline.tokenizer.vocab_size();
    let pooling = if pipeline.preprocess.prepend_cls {
        Pooling::Cls
    } else {
        Pooling::MaskedMean
    };
    let init_seed = match &cfg.source {
        EncoderSource::ToyRandom { seed } => *seed,
        EncoderSource::Pretrained { .. } => seed,
    };
    let mut model = Model::random(cfg.clone(), head_task(task), pooling, init_seed)?;
    let mut origin = format!("toy_random(seed {init_seed})");
    if let EncoderSource::Pretrained { path } = &cfg.source {
        let source = Checkpoint::load(Path::new(path))?;
        let copied = adapt_encoder(&source, &mut model, &pipeline.tokenizer)?;
        origin = format!(
            "pretrained({path}; {copied}/{} embedding rows mapped)",
            pipeline.tokenizer.vocab_size()
        );
    }
    Ok((model, origin))
}

fn shuffled_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE90C_0000 + epoch as u64));
    order.shuffle(&mut rng);
    order
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn new(root: &Path, config: &TrainConfig) -> Result<Self, TrainError> {
        let ckpts = root.join("checkpoints");
        fs::create_dir_all(&ckpts).map_err(TrainError::io(&ckpts))?;
        let cfg_path = root.join("train_config.json");
        let json = serde_json::to_string_pretty(config).expect("config serializes");
        fs::write(&cfg_path, json).map_err(TrainError::io(&cfg_path))?;
        let hist = root.join("history.tsv");
        fs::write(&hist, "epoch\ttrain_loss\tval_metric\tlr\n").map_err(TrainError::io(&hist))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    fn append_history(&self, r: &EpochRecord) -> Result<(), TrainError> {
        let p = self.root.join("history.tsv");
        let mut f = fs::OpenOptions::new().append(true).open(&p).map_err(TrainError::io(&p))?;
        writeln!(f, "{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.val_metric, r.lr).map_err(TrainError::io(&p))
    }

    fn save(&self, name: &str, ck: &Checkpoint) -> Result<(), TrainError> {
        ck.save(&self.root.join("checkpoints").join(name))?;
        Ok(())
    }
}

/// Runs the finetuning loop. The scaler is fitted on the training labels
/// only. After every epoch the validation metric is computed in label units
/// and the best checkpoint so far is kept; with `run_dir` set, history and
/// checkpoints are written under it.
pub fn train(
    split: &DatasetSplit,
    pipeline: &Pipeline,
    model: Model,
    head_init: &str,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let exec = config.execution;
    let task = config.task;
    if model.task() != head_task(task) {
        return Err(TrainError::Config(format!("model head does not fit task {}", task.name())));
    }
    let pipeline = Pipeline {
        preprocess: pipeline.preprocess.clone(),
        tokenizer: pipeline.tokenizer.clone().with_max_length(config.max_length),
    };
    if config.max_length > model.config.max_positions {
        return Err(TrainError::Config(format!(
            "max_length {} exceeds the encoder's max_positions {}",
            config.max_length, model.config.max_positions
        )));
    }

    let train_set = prepare_records(&pipeline, &split.train, task, exec);
    let val_set = prepare_records(&pipeline, &split.validation, task, exec);
    if train_set.labels.is_empty() {
        return Err(TrainError::NoLabels("training"));
    }
    if val_set.labels.is_empty() {
        return Err(TrainError::NoLabels("validation"));
    }
    let scaler = LabelScaler::fit(&train_set.labels, config.effective_scaler())?;
    let targets: Vec<f64> = train_set.labels.iter().map(|&y| scaler.transform(y)).collect::<Result<_, _>>()?;

    let metric_name = metric_for(task);
    let validate = |m: &Model| -> Result<f64, TrainError> {
        let preds = predict_examples(m, &scaler, &val_set.examples, exec)?;
        score(metric_name, &preds, &val_set.labels)
    };

    let run = run_dir.map(|d| RunDir::new(d, config)).transpose()?;
    let snapshot = |m: &Model, epoch: usize, step: u64, val: f64| Checkpoint {
        model: m.clone(),
        pipeline: pipeline.clone(),
        scaler,
        meta: CheckpointMeta {
            task,
            epoch,
            step,
            val_metric: Some(val),
            metric_name,
            head_init: head_init.to_string(),
            onecycle: config.onecycle,
            seed: config.seed,
            notes: Vec::new(),
        },
    };

    let mut model = model;
    let n = train_set.examples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let initial = validate(&model)?;
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        current_lr: config.onecycle.lr(0, total_steps, config.lr_max)?,
        initial_val_metric: initial,
        best_val_metric: initial,
        best_epoch: 0,
        metric_name,
        history: Vec::new(),
    };
    let mut best = snapshot(&model, 0, 0, initial);
    let shapes: Vec<usize> = model.slices().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes);

    for epoch in 1..=config.epochs {
        let order = shuffled_order(n, config.seed, epoch);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let chunk: Vec<TokenizedExample> = idx.iter().map(|&i| train_set.examples[i].clone()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let len = chunk.iter().map(|e| e.ids.len()).max().unwrap_or(1).max(1);
            let batch = pad_batch(&chunk, len)?;
            let dropout_seed = mix_seed(config.seed, 0xD0_0000_0000 + state.step);
            let (loss, mut grads) = model.loss_and_gradients(&batch, &y, Some(dropout_seed), exec)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: state.step,
                    loss,
                });
            }
            if let Some(clip) = config.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            let lr = config.onecycle.lr(state.step as usize, total_steps, config.lr_max)?;
            adam.step(model.slices_mut(), grads.slices(), lr);
            state.current_lr = lr;
            state.step += 1;
            loss_sum += loss * idx.len() as f64;
        }
        let val = validate(&model)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_metric: val,
            lr: state.current_lr,
        };
        state.epoch = epoch;
        if let Some(run) = &run {
            run.append_history(&record)?;
        }
        state.history.push(record);
        // The first epoch always replaces the untrained snapshot; later
        // epochs must strictly improve.
        if epoch == 1 || metric_name.is_better(val, state.best_val_metric) {
            state.best_val_metric = val;
            state.best_epoch = epoch;
            best = snapshot(&model, epoch, state.step, val);
            if let Some(run) = &run {
                run.save("best", &best)?;
            }
        }
        if let (Some(run), Retention::EveryEpoch) = (&run, config.retention) {
            run.save(&format!("epoch-{epoch}"), &snapshot(&model, epoch, state.step, val))?;
        }
    }

    let last_val = state.history.last().map_or(initial, |r| r.val_metric);
    let last = snapshot(&model, state.epoch, state.step, last_val);
    if let Some(run) = &run {
        if config.epochs == 0 {
            run.save("best", &best)?;
        }
        run.save("last", &last)?;
        let p = run.root.join("train_state.json");
        fs::write(&p, serde_json::to_string_pretty(&state).expect("state serializes"))
            .map_err(TrainError::io(&p))?;
    }
    Ok(TrainOutcome { best, last, state })
}

/// Continues from `source`: the encoder is carried over, the head is kept
/// when the task is unchanged and re-initialised otherwise, and the scaler
/// is refitted on the target training labels.
pub fn transfer_train(
    source: &Checkpoint,
    split: &DatasetSplit,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let mut model = source.model.clone();
    let head_init = if source.meta.task == config.task {
        format!("source:{}", source.meta.task.name())
    } else {
        model.head = PredictionHead::random(
            model.config.hidden_size,
            head_task(config.task),
            mix_seed(config.seed, 0x4EAD),
        );
        format!("random_uniform (source task {} differs)", source.meta.task.name())
    };
    train(split, &source.pipeline, model, &head_init, config, run_dir)
}
