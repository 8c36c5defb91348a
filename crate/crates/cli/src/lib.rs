//! Experiment drivers behind the `llmprop` binary.
//!
//! Every command resolves its configuration, stages all outputs in a hidden
//! temp directory under `--out`, writes the frozen config there first, and
//! moves everything into place only when the command succeeds.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use llmprop::corpus::{self, CorpusError, Schema, SplitName};
use llmprop::metrics::MetricsReport;
use llmprop::model::{EncoderSource, ModelError};
use llmprop::textprep::{preprocess, PreprocessConfig, StopwordList, TextprepError};
use llmprop::tokenizer::TokenizerError;
use llmprop::trainer::{
    self, Checkpoint, CheckpointError, OneCycle, Pipeline, Retention, TrainConfig, TrainError, TrainOutcome,
};
use llmprop::util::sha256_hex;
use llmprop::{CrystalRecord, DatasetSplit, EncoderConfig, Execution, ScaleMethod, Task, TokenizerBundle};
use thiserror::Error;

pub use config::Config;

/// Directory holding tokenizer and model assets referenced by relative path.
pub const CACHE_ENV: &str = "LLMPROP_CACHE";
pub const FROZEN_CONFIG: &str = "config.resolved";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::BadFractions(_) | CorpusError::SubsampleRange { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::EmptyCorpus | TokenizerError::Format { .. } => CliError::Data(e.to_string()),
            TokenizerError::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TextprepError> for CliError {
    fn from(e: TextprepError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(ModelError::Config(_)) => CliError::Config(e.to_string()),
            CheckpointError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::TaskMismatch { .. } | TrainError::Schedule(_) => {
                CliError::Config(e.to_string())
            }
            TrainError::Model(ModelError::Config(_)) => CliError::Config(e.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Tokenizer(t) => t.into(),
            TrainError::Io { .. } => CliError::Other(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    Train,
    Evaluate,
    Predict,
    ZeroShot,
    Transfer,
    Ablate,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Prepare,
        Command::Train,
        Command::Evaluate,
        Command::Predict,
        Command::ZeroShot,
        Command::Transfer,
        Command::Ablate,
        Command::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Predict => "predict",
            Command::ZeroShot => "zero-shot",
            Command::Transfer => "transfer",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Outputs are written under a hidden temp directory inside `out` and moved
/// into `out` by [`Staging::commit`]. Dropping without committing deletes
/// them.
pub struct Staging {
    tmp: tempfile::TempDir,
    out: PathBuf,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Staging, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".partial-")
            .tempdir_in(out)
            .map_err(|e| CliError::io(out, e))?;
        Ok(Staging {
            tmp,
            out: out.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.path().join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn commit(self) -> Result<(), CliError> {
        let entries = fs::read_dir(self.path()).map_err(|e| CliError::io(self.path(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(self.path(), e))?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
            } else if target.exists() {
                fs::remove_file(&target).map_err(|e| CliError::io(&target, e))?;
            }
            fs::rename(entry.path(), &target).map_err(|e| CliError::io(&target, e))?;
        }
        Ok(())
    }
}

/// Runs `command` and returns the lines meant for stdout.
pub fn run(command: Command, cfg: &Config, out: &Path) -> Result<Vec<String>, CliError> {
    let staging = Staging::new(out)?;
    staging.write(FROZEN_CONFIG, cfg.frozen())?;
    let lines = match command {
        Command::Prepare => cmd_prepare(cfg, &staging)?,
        Command::Train => cmd_train(cfg, &staging)?,
        Command::Evaluate => cmd_evaluate(cfg, &staging)?,
        Command::Predict => cmd_predict(cfg, &staging)?,
        Command::ZeroShot => cmd_zero_shot(cfg, &staging)?,
        Command::Transfer => cmd_transfer(cfg, &staging)?,
        Command::Ablate => experiments::cmd_ablate(cfg, &staging)?,
        Command::Sweep => experiments::cmd_sweep(cfg, &staging)?,
    };
    staging.commit()?;
    Ok(lines)
}

// ---- shared setup ----

pub fn execution(cfg: &Config) -> Result<Execution, CliError> {
    Ok(if cfg.flag("run.deterministic")? {
        Execution::Sequential
    } else {
        Execution::from_env()
    })
}

/// Resolves an asset path, falling back to the cache directory for relative
/// paths that do not exist from the working directory.
pub fn asset_path(raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_relative() && !p.exists() {
        if let Some(cache) = std::env::var_os(CACHE_ENV) {
            let cached = PathBuf::from(cache).join(&p);
            if cached.exists() {
                return cached;
            }
        }
    }
    p
}

fn load_checkpoint(cfg: &Config, key: &str) -> Result<Checkpoint, CliError> {
    let p = asset_path(cfg.required(key)?);
    if !p.is_dir() {
        return Err(CliError::Data(format!("{key}: checkpoint directory {} not found", p.display())));
    }
    Ok(Checkpoint::load(&p)?)
}

pub fn task(cfg: &Config) -> Result<Task, CliError> {
    let v = cfg.raw("train.task");
    Task::parse(v).ok_or_else(|| CliError::Config(format!("train.task = {v:?} is not a task")))
}

fn schema(cfg: &Config) -> Schema {
    let f = |k: &str| cfg.raw(&format!("corpus.schema.{k}")).to_string();
    Schema {
        id: f("id"),
        formula: f("formula"),
        description: f("description"),
        band_gap: f("band_gap"),
        volume: f("volume"),
        is_gap_direct: f("is_gap_direct"),
    }
}

pub struct Loaded {
    pub records: Vec<CrystalRecord>,
    pub rejected: usize,
}

pub fn load_records(cfg: &Config) -> Result<Loaded, CliError> {
    let path = cfg.path("corpus.path")?;
    let report = corpus::load_dataset(&path, &schema(cfg))?;
    if report.records.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no usable records ({} rows rejected)",
            path.display(),
            report.error_count()
        )));
    }
    for r in report.rejected.iter().take(5) {
        eprintln!("rejected row {}: {}", r.row, r.reason);
    }
    if report.error_count() > 5 {
        eprintln!("... {} rejected rows in total", report.error_count());
    }
    Ok(Loaded {
        rejected: report.error_count(),
        records: report.records,
    })
}

fn fractions(cfg: &Config) -> Result<(f64, f64, f64), CliError> {
    let raw = cfg.raw("corpus.fractions");
    if raw == "textedge" {
        return Ok(corpus::TEXTEDGE_FRACTIONS);
    }
    let parts: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("corpus.fractions = {raw:?}: {e}")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Config(format!("corpus.fractions needs three values, got {raw:?}"))),
    }
}

/// The split named by `corpus.manifest`, or a fresh seeded split.
pub fn make_split(cfg: &Config, records: &[CrystalRecord]) -> Result<DatasetSplit, CliError> {
    match cfg.opt("corpus.manifest") {
        Some(m) => {
            let text = fs::read_to_string(m).map_err(|e| CliError::Data(format!("corpus.manifest {m}: {e}")))?;
            Ok(corpus::apply_manifest(records, &text)?)
        }
        None => Ok(corpus::split_dataset(records, fractions(cfg)?, cfg.parse("corpus.split_seed")?)?),
    }
}

/// Applies `train.train_size` to an existing split.
pub fn sized_split(cfg: &Config, split: &DatasetSplit) -> Result<DatasetSplit, CliError> {
    match cfg.raw("train.train_size") {
        "all" | "" => Ok(split.clone()),
        _ => Ok(corpus::subsample_train(split, cfg.parse("train.train_size")?, cfg.parse("train.seed")?)?),
    }
}

pub fn preprocess_config(cfg: &Config) -> Result<PreprocessConfig, CliError> {
    let stopwords = match cfg.opt("prep.stopwords_file") {
        Some(p) => StopwordList::load(&asset_path(p))?,
        None => StopwordList::english(),
    };
    Ok(PreprocessConfig {
        replace_num: cfg.flag("prep.num")?,
        replace_ang: cfg.flag("prep.ang")?,
        remove_stopwords: cfg.flag("prep.stopwords")?,
        prepend_cls: cfg.flag("prep.cls")?,
        stopwords,
    })
}

pub fn encoder_config(cfg: &Config) -> Result<EncoderConfig, CliError> {
    let source = match cfg.raw("model.source") {
        "toy" | "" => EncoderSource::ToyRandom {
            seed: cfg.parse("model.seed")?,
        },
        p => EncoderSource::Pretrained {
            path: asset_path(p).to_string_lossy().into_owned(),
        },
    };
    Ok(EncoderConfig {
        vocab_size: 0,
        hidden_size: cfg.parse("model.hidden_size")?,
        num_layers: cfg.parse("model.num_layers")?,
        num_heads: cfg.parse("model.num_heads")?,
        ffn_size: cfg.parse("model.ffn_size")?,
        dropout: cfg.parse("model.dropout")?,
        max_positions: cfg.parse("model.max_positions")?,
        source,
    })
}

/// Preprocessing plus a tokenizer fitted on the preprocessed training text.
/// `tokenizer.kind = stock` reuses a pretrained source's vocabulary, or a
/// character-level one for the toy encoder.
pub fn build_pipeline(cfg: &Config, train: &[CrystalRecord]) -> Result<Pipeline, CliError> {
    let prep = preprocess_config(cfg)?;
    let max_length: usize = cfg.parse("tokenizer.max_length")?;
    let texts: Vec<String> = train.iter().map(|r| preprocess(&r.description, &prep).text).collect();
    let tokenizer = match cfg.raw("tokenizer.kind") {
        "trained" | "modified" => TokenizerBundle::train_vocab(&texts, cfg.parse("tokenizer.vocab_size")?, max_length)?,
        "stock" => match encoder_config(cfg)?.source {
            EncoderSource::Pretrained { path } => Checkpoint::load(Path::new(&path))?
                .pipeline
                .tokenizer
                .with_max_length(max_length),
            EncoderSource::ToyRandom { .. } => TokenizerBundle::character_level(&texts, max_length)?,
        },
        k => return Err(CliError::Config(format!("tokenizer.kind = {k:?}; expected trained or stock"))),
    };
    Ok(Pipeline {
        preprocess: prep,
        tokenizer,
    })
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let scaler = cfg.raw("train.scaler");
    let retention = match cfg.raw("train.retention") {
        "best_and_last" => Retention::BestAndLast,
        "every_epoch" => Retention::EveryEpoch,
        r => return Err(CliError::Config(format!("train.retention = {r:?}"))),
    };
    let grad_clip = match cfg.raw("train.grad_clip") {
        "none" | "off" | "" => None,
        _ => Some(cfg.parse("train.grad_clip")?),
    };
    let tc = TrainConfig {
        task: task(cfg)?,
        batch_size: cfg.parse("train.batch_size")?,
        lr_max: cfg.parse("train.lr_max")?,
        epochs: cfg.parse("train.epochs")?,
        max_length: cfg.parse("tokenizer.max_length")?,
        scaler_method: ScaleMethod::parse(scaler)
            .ok_or_else(|| CliError::Config(format!("train.scaler = {scaler:?} is not a scaler")))?,
        seed: cfg.parse("train.seed")?,
        init_from: None,
        onecycle: OneCycle {
            pct_warmup: cfg.parse("train.pct_warmup")?,
            final_lr_fraction: cfg.parse("train.final_lr_fraction")?,
        },
        grad_clip,
        retention,
        execution: execution(cfg)?,
    };
    tc.validate()?;
    Ok(tc)
}

pub fn manifest_hash(split: &DatasetSplit) -> String {
    sha256_hex(split.manifest().as_bytes())
}

// ---- tables ----

pub const TABLE_HEADER: &str = "task\tmetric\tvalue\tunits\tn\tskipped\tmean_prediction\tstatus\tcheckpoint_hash\tsplit_manifest_hash";

/// One metrics table row; `None` marks a cell that was not run.
pub fn table_cells(report: Option<&MetricsReport>, task: Task, status: &str) -> String {
    match report {
        Some(r) => format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{status}\t{}\t{}",
            r.task,
            r.metric_name.as_str(),
            r.value,
            r.units,
            r.n,
            r.skipped,
            r.mean_prediction,
            r.checkpoint_hash.as_deref().unwrap_or(""),
            r.split_manifest_hash.as_deref().unwrap_or("")
        ),
        None => format!(
            "{}\t{}\tNA\t{}\t0\t0\tNA\t{status}\t\t",
            task.name(),
            trainer::metric_for(task).as_str(),
            task.units()
        ),
    }
}

fn write_report(staging: &Staging, report: &MetricsReport) -> Result<(), CliError> {
    staging.write("metrics.json", report.to_json() + "\n")?;
    let task = Task::parse(&report.task).expect("report task name is valid");
    staging.write("metrics.tsv", format!("{TABLE_HEADER}\n{}\n", table_cells(Some(report), task, "ok")))?;
    Ok(())
}

// ---- commands ----

fn cmd_prepare(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let loaded = load_records(cfg)?;
    let split = make_split(cfg, &loaded.records)?;
    let pipeline = build_pipeline(cfg, &split.train)?;
    let max_length = pipeline.tokenizer.max_length();

    let (mut n_num, mut n_ang, mut n_stop, mut tokens, mut truncated) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for name in [SplitName::Train, SplitName::Validation, SplitName::Test] {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
        let row_err = |e: csv::Error| CliError::Other(e.to_string());
        w.write_record(["id", "text", "num_substitutions", "ang_substitutions", "stopwords_removed", "tokens"])
            .map_err(row_err)?;
        for r in split.part(name) {
            let p = preprocess(&r.description, &pipeline.preprocess);
            let len = pipeline.tokenizer.encode_full(&p.text).len();
            n_num += p.num_substitutions;
            n_ang += p.ang_substitutions;
            n_stop += p.stopwords_removed;
            tokens += len;
            truncated += usize::from(len > max_length);
            w.write_record([
                r.id.clone(),
                p.text,
                p.num_substitutions.to_string(),
                p.ang_substitutions.to_string(),
                p.stopwords_removed.to_string(),
                len.to_string(),
            ])
            .map_err(row_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
        staging.write(&format!("processed/{}.tsv", name.name()), bytes)?;
    }
    staging.write("split_manifest.tsv", split.manifest())?;
    pipeline
        .tokenizer
        .save(&staging.path().join("vocab.tsv"))?;

    let n = split.len();
    let labelled = |t: Task| loaded.records.iter().filter(|r| r.label(t).is_some()).count();
    let stats = serde_json::json!({
        "records": loaded.records.len(),
        "rejected_rows": loaded.rejected,
        "train": split.train.len(),
        "validation": split.validation.len(),
        "test": split.test.len(),
        "labelled": {
            "band_gap": labelled(Task::BandGap),
            "volume": labelled(Task::Volume),
            "is_gap_direct": labelled(Task::IsGapDirect),
        },
        "vocab_size": pipeline.tokenizer.vocab_size(),
        "max_length": max_length,
        "mean_tokens": tokens as f64 / n as f64,
        "truncated": truncated,
        "num_substitutions": n_num,
        "ang_substitutions": n_ang,
        "stopwords_removed": n_stop,
        "split_manifest_hash": manifest_hash(&split),
    });
    staging.write("stats.json", serde_json::to_string_pretty(&stats).expect("json") + "\n")?;
    Ok(vec![
        format!(
            "records {} (rejected {}), split {}/{}/{}",
            loaded.records.len(),
            loaded.rejected,
            split.train.len(),
            split.validation.len(),
            split.test.len()
        ),
        format!(
            "vocab {} tokens, mean length {:.1} tokens, {} truncated at {}",
            pipeline.tokenizer.vocab_size(),
            tokens as f64 / n as f64,
            truncated,
            max_length
        ),
        format!("substitutions: [NUM] {n_num}, [ANG] {n_ang}, stopwords removed {n_stop}"),
    ])
}

/// Trains one model into `run_dir` and scores the best checkpoint on test.
pub fn train_and_test(cfg: &Config, split: &DatasetSplit, run_dir: &Path) -> Result<(TrainOutcome, MetricsReport), CliError> {
    let tc = train_config(cfg)?;
    let pipeline = build_pipeline(cfg, &split.train)?;
    let (model, origin) = trainer::build_model(&encoder_config(cfg)?, &pipeline, tc.task, cfg.parse("model.seed")?)?;
    let outcome = trainer::train(split, &pipeline, model, &format!("random_uniform; encoder {origin}"), &tc, Some(run_dir))?;
    let mut report = trainer::evaluate(&outcome.best, &split.test, tc.task, tc.execution)?;
    report.split_manifest_hash = Some(manifest_hash(split));
    report.notes.push(format!("best epoch {}", outcome.state.best_epoch));
    Ok((outcome, report))
}

fn cmd_train(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let loaded = load_records(cfg)?;
    let split = sized_split(cfg, &make_split(cfg, &loaded.records)?)?;
    staging.write("split_manifest.tsv", split.manifest())?;
    let (_, report) = train_and_test(cfg, &split, staging.path())?;
    write_report(staging, &report)?;
    Ok(vec![report.summary()])
}

fn eval_split(cfg: &Config) -> Result<SplitName, CliError> {
    let v = cfg.raw("eval.split");
    SplitName::parse(v).ok_or_else(|| CliError::Config(format!("eval.split = {v:?}")))
}

fn cmd_evaluate(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let ckpt = load_checkpoint(cfg, "eval.checkpoint")?;
    let loaded = load_records(cfg)?;
    let split = make_split(cfg, &loaded.records)?;
    let part = eval_split(cfg)?;
    let mut report = trainer::evaluate(&ckpt, split.part(part), ckpt.meta.task, execution(cfg)?)?;
    report.split_manifest_hash = Some(manifest_hash(&split));
    report.notes.push(format!("evaluated on the {} split", part.name()));
    write_report(staging, &report)?;
    Ok(vec![report.summary()])
}

fn cmd_predict(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let ckpt = load_checkpoint(cfg, "predict.checkpoint")?;
    let input = cfg.path("predict.input")?;
    let text = fs::read_to_string(&input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(CliError::Data(format!("{} has no descriptions", input.display())));
    }
    let exec = execution(cfg)?;
    let examples = exec.map(&lines, |l| ckpt.pipeline.encode(l));
    let preds = trainer::predict_examples(&ckpt.model, &ckpt.scaler, &examples, exec)?;
    let out: Vec<String> = preds.iter().map(|p| p.to_string()).collect();
    staging.write("predictions.txt", out.iter().map(|s| format!("{s}\n")).collect::<String>())?;
    Ok(out)
}

fn cmd_zero_shot(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let ckpt = load_checkpoint(cfg, "zero_shot.checkpoint")?;
    let task = task(cfg)?;
    let loaded = load_records(cfg)?;
    let split = make_split(cfg, &loaded.records)?;
    let reference: Vec<f64> = split.train.iter().filter_map(|r| r.label(task)).collect();
    let mut report = trainer::zero_shot(
        &ckpt,
        split.part(eval_split(cfg)?),
        task,
        Some(&reference).filter(|r| !r.is_empty()).map(|r| r.as_slice()),
        cfg.parse("zero_shot.head_seed")?,
        execution(cfg)?,
    )?;
    report.split_manifest_hash = Some(manifest_hash(&split));
    write_report(staging, &report)?;
    Ok(vec![report.summary()])
}

fn cmd_transfer(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let source = load_checkpoint(cfg, "transfer.source")?;
    let loaded = load_records(cfg)?;
    let split = sized_split(cfg, &make_split(cfg, &loaded.records)?)?;
    staging.write("split_manifest.tsv", split.manifest())?;
    let tc = train_config(cfg)?;
    let outcome = trainer::transfer_train(&source, &split, &tc, Some(staging.path()))?;
    let mut report = trainer::evaluate(&outcome.best, &split.test, tc.task, tc.execution)?;
    report.split_manifest_hash = Some(manifest_hash(&split));
    report.notes.push(format!(
        "transferred from a {} checkpoint ({})",
        source.meta.task.name(),
        source.hash()
    ));
    write_report(staging, &report)?;
    Ok(vec![report.summary()])
}
