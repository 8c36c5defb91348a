#![allow(dead_code)]

use std::path::PathBuf;

use llmprop::corpus::{CrystalRecord, Task};
use llmprop::model::{EncoderConfig, Model};
use llmprop::textprep::{preprocess, PreprocessConfig};
use llmprop::tokenizer::TokenizerBundle;
use llmprop::trainer::{build_model, Pipeline};

pub struct Golden {
    pub name: String,
    pub raw: String,
    pub processed: String,
    pub record: CrystalRecord,
    pub num: usize,
    pub ang: usize,
    pub stopwords_removed: usize,
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn read_line_file(name: &str) -> String {
    let text = std::fs::read_to_string(golden_dir().join(name)).expect("golden file");
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

/// The three reference descriptions with their labels and expected counts.
pub fn goldens() -> Vec<Golden> {
    let table = std::fs::read_to_string(golden_dir().join("golden.tsv")).expect("golden.tsv");
    table
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let raw = read_line_file(&format!("{}.raw.txt", f[0]));
            Golden {
                name: f[0].to_string(),
                processed: read_line_file(&format!("{}.processed.txt", f[0])),
                record: CrystalRecord {
                    id: f[1].to_string(),
                    formula: String::new(),
                    description: raw.clone(),
                    band_gap: Some(f[2].parse().unwrap()),
                    volume: Some(f[3].parse().unwrap()),
                    is_gap_direct: Some(f[4] == "true"),
                },
                raw,
                num: f[5].parse().unwrap(),
                ang: f[6].parse().unwrap(),
                stopwords_removed: f[7].parse().unwrap(),
            }
        })
        .collect()
}

/// Tokenizer trained on preprocessed `records`, full preprocessing.
pub fn pipeline_for(records: &[CrystalRecord], vocab: usize, max_length: usize) -> Pipeline {
    let pre = PreprocessConfig::all();
    let texts: Vec<String> = records.iter().map(|r| preprocess(&r.description, &pre).text).collect();
    Pipeline {
        tokenizer: TokenizerBundle::train_vocab(&texts, vocab, max_length).unwrap(),
        preprocess: pre,
    }
}

pub fn toy_encoder(hidden: usize, layers: usize, heads: usize, seed: u64) -> EncoderConfig {
    let mut cfg = EncoderConfig::toy(0, seed);
    cfg.hidden_size = hidden;
    cfg.num_layers = layers;
    cfg.num_heads = heads;
    cfg.ffn_size = 2 * hidden;
    cfg
}

pub fn toy_model(pipeline: &Pipeline, task: Task, hidden: usize, seed: u64) -> Model {
    build_model(&toy_encoder(hidden, 2, 2, seed), pipeline, task, seed).unwrap().0
}
