//! Checkpoint directories: `weights.bin`, `meta.json`, `scaler.json`,
//! `vocab.tsv`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;
use crate::labelscale::LabelScaler;
use crate::metrics::MetricName;
use crate::model::{EncoderConfig, HeadTask, Model, ModelError, Pooling};
use crate::textprep::{preprocess, PreprocessConfig};
use crate::tokenizer::{TokenizedExample, TokenizerBundle, TokenizerError};
use crate::trainer::schedule::OneCycle;
use crate::util::sha256_hex;

const MAGIC: &[u8; 8] = b"LLMPW001";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const META_FILE: &str = "meta.json";
pub const SCALER_FILE: &str = "scaler.json";
pub const VOCAB_FILE: &str = "vocab.tsv";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt weights file: {0}")]
    Weights(String),
    #[error("bad metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("vocabulary fingerprint mismatch: meta says {expected}, vocab file hashes to {found}")]
    VocabMismatch { expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Frozen text pipeline: preprocessing switches plus tokenizer. Stored in
/// every checkpoint so inference sees exactly the training-time transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub preprocess: PreprocessConfig,
    pub tokenizer: TokenizerBundle,
}

impl Pipeline {
    pub fn encode(&self, description: &str) -> TokenizedExample {
        self.tokenizer.encode(&preprocess(description, &self.preprocess).text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub epoch: usize,
    pub step: u64,
    pub val_metric: Option<f64>,
    pub metric_name: MetricName,
    /// How the head was initialised ("random_uniform", "source:<task>", ...).
    pub head_init: String,
    pub onecycle: OneCycle,
    pub seed: u64,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: CheckpointMeta,
    encoder: EncoderConfig,
    pooling: Pooling,
    head_task: HeadTask,
    preprocess: PreprocessConfig,
    vocab_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub pipeline: Pipeline,
    pub scaler: LabelScaler,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    fn weights_bytes(&self) -> Vec<u8> {
        let mut named: Vec<(String, Vec<usize>, &[f64])> = self.model.encoder.tensors();
        named.push((
            "head.weight".into(),
            vec![self.model.head.weight.len()],
            self.model.head.weight.as_slice().unwrap(),
        ));
        named.push(("head.bias".into(), vec![1], std::slice::from_ref(&self.model.head.bias)));

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, shape, data) in named {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    fn meta_json(&self) -> String {
        let file = MetaFile {
            meta: self.meta.clone(),
            encoder: self.model.config.clone(),
            pooling: self.model.pooling,
            head_task: self.model.head.task,
            preprocess: self.pipeline.preprocess.clone(),
            vocab_fingerprint: self.pipeline.tokenizer.fingerprint(),
        };
        serde_json::to_string_pretty(&file).expect("meta serializes")
    }

    fn files(&self) -> [(&'static str, Vec<u8>); 4] {
        [
            (WEIGHTS_FILE, self.weights_bytes()),
            (META_FILE, self.meta_json().into_bytes()),
            (
                SCALER_FILE,
                serde_json::to_string_pretty(&self.scaler).expect("scaler serializes").into_bytes(),
            ),
            (VOCAB_FILE, self.pipeline.tokenizer.to_vocab_file().into_bytes()),
        ]
    }

    /// sha256 over the serialized files in a fixed order.
    pub fn hash(&self) -> String {
        let mut all = Vec::new();
        for (name, bytes) in self.files() {
            all.extend_from_slice(name.as_bytes());
            all.push(0);
            all.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            all.extend_from_slice(&bytes);
        }
        sha256_hex(&all)
    }

    /// Writes into `dir` via a sibling temp directory and a rename, so a
    /// crash never leaves a half-written checkpoint under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        let parent = dir.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        let tmp = parent.join(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        for (file, bytes) in self.files() {
            let p = tmp.join(file);
            fs::write(&p, bytes).map_err(io_err(&p))?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::rename(&tmp, dir).map_err(io_err(dir))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint, CheckpointError> {
        let read = |f: &str| {
            let p = dir.join(f);
            fs::read(&p).map_err(io_err(&p))
        };
        let meta: MetaFile = serde_json::from_slice(&read(META_FILE)?)?;
        let scaler: LabelScaler = serde_json::from_slice(&read(SCALER_FILE)?)?;
        let vocab = String::from_utf8(read(VOCAB_FILE)?)
            .map_err(|e| CheckpointError::Weights(format!("vocab file is not UTF-8: {e}")))?;
        let tokenizer = TokenizerBundle::from_vocab_file(&vocab)?;
        let found = tokenizer.fingerprint();
        if found != meta.vocab_fingerprint {
            return Err(CheckpointError::VocabMismatch {
                expected: meta.vocab_fingerprint,
                found,
            });
        }
        let mut model = Model::random(meta.encoder.clone(), meta.head_task, meta.pooling, 0)?;
        read_weights(&read(WEIGHTS_FILE)?, &mut model)?;
        Ok(Checkpoint {
            model,
            pipeline: Pipeline {
                preprocess: meta.preprocess,
                tokenizer,
            },
            scaler,
            meta: meta.meta,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Weights("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_weights(bytes: &[u8], model: &mut Model) -> Result<(), CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::Weights("bad magic".into()));
    }
    let count = r.u32()? as usize;

    let mut expected: Vec<(String, Vec<usize>)> =
        model.encoder.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    expected.push(("head.weight".into(), vec![model.head.weight.len()]));
    expected.push(("head.bias".into(), vec![1]));
    if count != expected.len() {
        return Err(CheckpointError::Weights(format!(
            "{count} tensors stored, model has {}",
            expected.len()
        )));
    }

    let mut slots = model.slices_mut();
    for (slot, (want_name, want_shape)) in slots.iter_mut().zip(&expected) {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Weights("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if &name != want_name || &shape != want_shape {
            return Err(CheckpointError::Weights(format!(
                "tensor {name} {shape:?} where {want_name} {want_shape:?} was expected"
            )));
        }
        let data = r.take(slot.len() * 8)?;
        for (x, chunk) in slot.iter_mut().zip(data.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Weights("trailing bytes".into()));
    }
    Ok(())
}

/// Copies a source encoder into a model sized for `tokenizer`. Layer weights
/// must match in shape; embedding rows are carried over by token string and
/// tokens unknown to the source keep their random initialisation. Returns the
/// number of embedding rows copied.
pub fn adapt_encoder(source: &Checkpoint, target: &mut Model, tokenizer: &TokenizerBundle) -> Result<usize, CheckpointError> {
    let (s, t) = (&source.model.config, &target.config);
    if s.hidden_size != t.hidden_size || s.num_layers != t.num_layers || s.ffn_size != t.ffn_size {
        return Err(CheckpointError::Model(ModelError::Config(format!(
            "source encoder {}x{} (ffn {}) does not match target {}x{} (ffn {})",
            s.num_layers, s.hidden_size, s.ffn_size, t.num_layers, t.hidden_size, t.ffn_size
        ))));
    }
    let src = &source.model.encoder;
    let dst = &mut target.encoder;
    dst.layers.clone_from(&src.layers);
    dst.final_norm.assign(&src.final_norm);
    let p = src.position_embedding.nrows().min(dst.position_embedding.nrows());
    dst.position_embedding
        .slice_mut(ndarray::s![..p, ..])
        .assign(&src.position_embedding.slice(ndarray::s![..p, ..]));
    let src_tok = &source.pipeline.tokenizer;
    let mut copied = 0;
    for (id, tok) in tokenizer.tokens().iter().enumerate() {
        if let Some(sid) = src_tok.id(tok) {
            dst.token_embedding.row_mut(id).assign(&src.token_embedding.row(sid as usize));
            copied += 1;
        }
    }
    Ok(copied)
}
