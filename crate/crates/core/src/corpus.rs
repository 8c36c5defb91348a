//! Dataset ingestion, validation, splitting and subsampling.
//!
//! Records are read either from a delimited file with a header row (comma or
//! tab separated) or from a file holding one JSON object per line. The mapping
//! from logical fields to column/key names is explicit, see [`Schema`].

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("required column `{column}` (field {field}) missing from header")]
    MissingColumn { field: &'static str, column: String },
    #[error("malformed delimited file: {0}")]
    Csv(#[from] csv::Error),
    #[error("split fractions must sum to 1 (got {0})")]
    BadFractions(f64),
    #[error("need at least 3 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("subsample size {n} outside 1..={available}")]
    SubsampleRange { n: usize, available: usize },
    #[error("split manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// Property labels a model can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BandGap,
    Volume,
    IsGapDirect,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::BandGap, Task::Volume, Task::IsGapDirect];

    pub fn name(self) -> &'static str {
        match self {
            Task::BandGap => "band_gap",
            Task::Volume => "volume",
            Task::IsGapDirect => "is_gap_direct",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Task::IsGapDirect)
    }

    pub fn units(self) -> &'static str {
        match self {
            Task::BandGap => "eV",
            Task::Volume => "Å³/cell",
            Task::IsGapDirect => "dimensionless",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One crystal with its text description and property labels.
///
/// Labels are optional: a record missing one label is still usable for the
/// tasks whose label it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalRecord {
    pub id: String,
    pub formula: String,
    pub description: String,
    /// eV, non-negative.
    pub band_gap: Option<f64>,
    /// Å³ per cell, positive.
    pub volume: Option<f64>,
    pub is_gap_direct: Option<bool>,
}

impl CrystalRecord {
    /// The numeric target for `task`; classification labels map to 0/1.
    pub fn label(&self, task: Task) -> Option<f64> {
        match task {
            Task::BandGap => self.band_gap,
            Task::Volume => self.volume,
            Task::IsGapDirect => self.is_gap_direct.map(|b| if b { 1.0 } else { 0.0 }),
        }
    }
}

/// Column (delimited) or key (JSON lines) names for the six logical fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub formula: String,
    pub description: String,
    pub band_gap: String,
    pub volume: String,
    pub is_gap_direct: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: "id".into(),
            formula: "formula".into(),
            description: "description".into(),
            band_gap: "band_gap".into(),
            volume: "volume".into(),
            is_gap_direct: "is_gap_direct".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Delimited(u8),
    JsonLines,
}

impl FileFormat {
    /// Picks a format from the extension, falling back to sniffing the first
    /// non-blank character.
    pub fn detect(path: &Path, contents: &str) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => FileFormat::Delimited(b'\t'),
            Some("csv") => FileFormat::Delimited(b','),
            Some("jsonl") | Some("ndjson") | Some("json") => FileFormat::JsonLines,
            _ => {
                if contents.trim_start().starts_with('{') {
                    FileFormat::JsonLines
                } else if contents.lines().next().is_some_and(|l| l.contains('\t')) {
                    FileFormat::Delimited(b'\t')
                } else {
                    FileFormat::Delimited(b',')
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

/// Result of ingesting a file: the valid records plus every rejected row.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<CrystalRecord>,
    pub rejected: Vec<RowError>,
}

impl LoadReport {
    pub fn error_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Accepts Yes/No, true/false and 1/0 in any case.
pub fn parse_bool_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "yes" | "true" | "1" => Some(true),
        "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

struct RawRow {
    id: Option<String>,
    formula: Option<String>,
    description: Option<String>,
    band_gap: Option<String>,
    volume: Option<String>,
    is_gap_direct: Option<String>,
}

fn blank_to_none(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

fn validate(raw: RawRow) -> Result<CrystalRecord, String> {
    let id = blank_to_none(raw.id).ok_or("missing id")?.trim().to_string();
    let description = raw.description.unwrap_or_default();
    if description.trim().is_empty() {
        return Err("missing or empty description".into());
    }
    let band_gap = match blank_to_none(raw.band_gap) {
        None => None,
        Some(v) => {
            let x: f64 = v.trim().parse().map_err(|_| format!("unparseable band_gap {v:?}"))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(format!("band_gap must be >= 0, got {x}"));
            }
            Some(x)
        }
    };
    let volume = match blank_to_none(raw.volume) {
        None => None,
        Some(v) => {
            let x: f64 = v.trim().parse().map_err(|_| format!("unparseable volume {v:?}"))?;
            if !(x.is_finite() && x > 0.0) {
                return Err(format!("volume must be > 0, got {x}"));
            }
            Some(x)
        }
    };
    let is_gap_direct = match blank_to_none(raw.is_gap_direct) {
        None => None,
        Some(v) => Some(parse_bool_label(&v).ok_or_else(|| format!("unparseable is_gap_direct {v:?}"))?),
    };
    Ok(CrystalRecord {
        id,
        formula: raw.formula.unwrap_or_default().trim().to_string(),
        description,
        band_gap,
        volume,
        is_gap_direct,
    })
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// Reads every valid record from `path`. Invalid rows and duplicate ids are
/// collected in [`LoadReport::rejected`]; structural problems (missing file,
/// missing header column) are hard errors.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<LoadReport, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let contents = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if contents.trim().is_empty() {
        return Ok(LoadReport::default());
    }
    let rows = match FileFormat::detect(path, &contents) {
        FileFormat::Delimited(delim) => read_delimited(&contents, delim, schema)?,
        FileFormat::JsonLines => read_json_lines(&contents, schema),
    };

    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (row, raw) in rows {
        match raw.and_then(validate) {
            Ok(rec) => {
                if seen.insert(rec.id.clone()) {
                    report.records.push(rec);
                } else {
                    report.rejected.push(RowError {
                        row,
                        reason: format!("duplicate id {}", rec.id),
                    });
                }
            }
            Err(reason) => report.rejected.push(RowError { row, reason }),
        }
    }
    Ok(report)
}

type RawResult = Result<RawRow, String>;

fn read_delimited(contents: &str, delim: u8, schema: &Schema) -> Result<Vec<(usize, RawResult)>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .from_reader(contents.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |field: &'static str, name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                field,
                column: name.to_string(),
            })
    };
    let cols = [
        col("id", &schema.id)?,
        col("formula", &schema.formula)?,
        col("description", &schema.description)?,
        col("band_gap", &schema.band_gap)?,
        col("volume", &schema.volume)?,
        col("is_gap_direct", &schema.is_gap_direct)?,
    ];
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let raw = match rec {
            Ok(r) => {
                let get = |c: usize| r.get(c).map(str::to_string);
                Ok(RawRow {
                    id: get(cols[0]),
                    formula: get(cols[1]),
                    description: get(cols[2]),
                    band_gap: get(cols[3]),
                    volume: get(cols[4]),
                    is_gap_direct: get(cols[5]),
                })
            }
            Err(e) => Err(format!("malformed row: {e}")),
        };
        out.push((row, raw));
    }
    Ok(out)
}

fn read_json_lines(contents: &str, schema: &Schema) -> Vec<(usize, RawResult)> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let raw = match serde_json::from_str::<serde_json::Value>(line) {
                Ok(serde_json::Value::Object(obj)) => Ok(RawRow {
                    id: json_field(&obj, &schema.id),
                    formula: json_field(&obj, &schema.formula),
                    description: json_field(&obj, &schema.description),
                    band_gap: json_field(&obj, &schema.band_gap),
                    volume: json_field(&obj, &schema.volume),
                    is_gap_direct: json_field(&obj, &schema.is_gap_direct),
                }),
                Ok(_) => Err("line is not a JSON object".to_string()),
                Err(e) => Err(format!("invalid JSON: {e}")),
            };
            (i + 1, raw)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SplitName> {
        match s {
            "train" => Some(SplitName::Train),
            "validation" | "val" => Some(SplitName::Validation),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }
}

/// Fractions reproducing the published TextEdge partition sizes
/// (125,098 / 9,945 / 9,888 of 144,931).
pub const TEXTEDGE_FRACTIONS: (f64, f64, f64) = (
    125_098.0 / 144_931.0,
    9_945.0 / 144_931.0,
    9_888.0 / 144_931.0,
);

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<CrystalRecord>,
    pub validation: Vec<CrystalRecord>,
    pub test: Vec<CrystalRecord>,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, name: SplitName) -> &[CrystalRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `<id>\t<split-name>` lines, train first, then validation, then test.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for name in [SplitName::Train, SplitName::Validation, SplitName::Test] {
            for r in self.part(name) {
                out.push_str(&r.id);
                out.push('\t');
                out.push_str(name.name());
                out.push('\n');
            }
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(self.manifest().as_bytes())
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Rebuilds a split from a manifest. Records whose id is absent from the
/// manifest are ignored; manifest ids absent from `records` are an error.
pub fn apply_manifest(records: &[CrystalRecord], manifest: &str) -> Result<DatasetSplit, CorpusError> {
    let by_id: std::collections::HashMap<&str, &CrystalRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        split_seed: 0,
    };
    let mut seen = HashSet::new();
    for (i, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CorpusError::Manifest { line: i + 1, reason };
        let (id, name) = line.split_once('\t').ok_or_else(|| bad("expected `<id>\\t<split>`".into()))?;
        let name = SplitName::parse(name.trim()).ok_or_else(|| bad(format!("unknown split {name:?}")))?;
        let rec = by_id.get(id).ok_or_else(|| bad(format!("id {id} not in dataset")))?;
        if !seen.insert(id) {
            return Err(bad(format!("id {id} listed twice")));
        }
        let part = match name {
            SplitName::Train => &mut split.train,
            SplitName::Validation => &mut split.validation,
            SplitName::Test => &mut split.test,
        };
        part.push((*rec).clone());
    }
    Ok(split)
}

/// Seeded random partition. Sizes are `round(f·N)` for train and validation,
/// the remainder goes to test.
pub fn split_dataset(
    records: &[CrystalRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let (ft, fv, fs_) = fractions;
    let sum = ft + fv + fs_;
    if (sum - 1.0).abs() > 1e-9 || [ft, fv, fs_].iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CorpusError::BadFractions(sum));
    }
    let n = records.len();
    if n < 3 {
        return Err(CorpusError::TooFewRecords(n));
    }
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        split_seed: seed,
    })
}

/// Keeps exactly `n` training records drawn without replacement, in their
/// original relative order. Validation and test are untouched.
pub fn subsample_train(split: &DatasetSplit, n: usize, seed: u64) -> Result<DatasetSplit, CorpusError> {
    let available = split.train.len();
    if n == 0 || n > available {
        return Err(CorpusError::SubsampleRange { n, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, available, n).into_vec();
    picked.sort_unstable();
    Ok(DatasetSplit {
        train: picked.into_iter().map(|i| split.train[i].clone()).collect(),
        validation: split.validation.clone(),
        test: split.test.clone(),
        split_seed: split.split_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn rec(i: usize) -> CrystalRecord {
        CrystalRecord {
            id: format!("mp-{i}"),
            formula: "X".into(),
            description: format!("desc {i}"),
            band_gap: Some(i as f64),
            volume: Some(1.0 + i as f64),
            is_gap_direct: Some(i % 2 == 0),
        }
    }

    fn ids(rs: &[CrystalRecord]) -> BTreeSet<String> {
        rs.iter().map(|r| r.id.clone()).collect()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_nacl_row_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.csv",
            "id,formula,description,band_gap,volume,is_gap_direct\n\
             mp-22851,NaCl,\"NaCl is Tetraauricupride structured and crystallizes in the cubic Pm-3m space group.\",3.97,42.96,No\n",
        );
        let rep = load_dataset(&p, &Schema::default()).unwrap();
        assert_eq!(rep.error_count(), 0);
        let r = &rep.records[0];
        assert_eq!(r.id, "mp-22851");
        assert_eq!(r.band_gap, Some(3.97));
        assert_eq!(r.volume, Some(42.96));
        assert_eq!(r.is_gap_direct, Some(false));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "");
        let rep = load_dataset(&p, &Schema::default()).unwrap();
        assert!(rep.records.is_empty());
        assert_eq!(rep.error_count(), 0);
    }

    #[test]
    fn negative_band_gap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"formula\":\"X\",\"description\":\"d\",\"band_gap\":\"-1.0\",\"volume\":1,\"is_gap_direct\":\"Yes\"}\n\
             {\"id\":\"b\",\"formula\":\"X\",\"description\":\"d\",\"band_gap\":1.0,\"volume\":1,\"is_gap_direct\":true}\n",
        );
        let rep = load_dataset(&p, &Schema::default()).unwrap();
        assert_eq!(rep.error_count(), 1);
        assert_eq!(rep.rejected[0].row, 1);
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.records[0].is_gap_direct, Some(true));
    }

    #[test]
    fn missing_label_kept_missing_description_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.tsv",
            "id\tformula\tdescription\tband_gap\tvolume\tis_gap_direct\n\
             a\tX\tsome text\t\t10\tno\n\
             b\tX\t  \t1\t10\tno\n\
             a\tX\tdup\t1\t10\tno\n\
             c\tX\ttext\tabc\t10\tno\n",
        );
        let rep = load_dataset(&p, &Schema::default()).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.records[0].band_gap, None);
        assert_eq!(rep.error_count(), 3);
    }

    #[test]
    fn missing_file_and_column_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join("nope.csv"), &Schema::default()),
            Err(CorpusError::MissingFile(_))
        ));
        let p = write(&dir, "d.csv", "id,formula,description,band_gap,volume\na,X,d,1,1\n");
        assert!(matches!(
            load_dataset(&p, &Schema::default()),
            Err(CorpusError::MissingColumn { field: "is_gap_direct", .. })
        ));
    }

    #[test]
    fn custom_schema_maps_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "material_id,f,text,gap,vol,direct\nmp-1,X,hello,0,2,TRUE\n");
        let schema = Schema {
            id: "material_id".into(),
            formula: "f".into(),
            description: "text".into(),
            band_gap: "gap".into(),
            volume: "vol".into(),
            is_gap_direct: "direct".into(),
        };
        let rep = load_dataset(&p, &schema).unwrap();
        assert_eq!(rep.records[0].is_gap_direct, Some(true));
        assert_eq!(rep.records[0].band_gap, Some(0.0));
    }

    #[test]
    fn bool_label_spellings() {
        for (s, v) in [("Yes", true), ("NO", false), ("true", true), ("False", false), ("1", true), ("0", false)] {
            assert_eq!(parse_bool_label(s), Some(v));
        }
        assert_eq!(parse_bool_label("maybe"), None);
    }

    #[test]
    fn split_ten_records() {
        let rs: Vec<_> = (0..10).map(rec).collect();
        let s = split_dataset(&rs, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        let again = split_dataset(&rs, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(ids(&s.train), ids(&again.train));
        assert_eq!(ids(&s.validation), ids(&again.validation));
        assert_eq!(ids(&s.test), ids(&again.test));
    }

    #[test]
    fn split_reproduces_textedge_sizes() {
        let rs: Vec<_> = (0..144_931).map(rec).collect();
        let s = split_dataset(&rs, TEXTEDGE_FRACTIONS, 42).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (125_098, 9_945, 9_888));
    }

    #[test]
    fn split_errors() {
        let rs: Vec<_> = (0..10).map(rec).collect();
        assert!(matches!(split_dataset(&rs, (0.5, 0.1, 0.1), 0), Err(CorpusError::BadFractions(_))));
        assert!(matches!(split_dataset(&rs[..2], (0.8, 0.1, 0.1), 0), Err(CorpusError::TooFewRecords(2))));
    }

    #[test]
    fn subsample_contract() {
        let rs: Vec<_> = (0..10).map(rec).collect();
        let s = split_dataset(&rs, (0.8, 0.1, 0.1), 1).unwrap();
        let full = subsample_train(&s, s.train.len(), 5).unwrap();
        assert_eq!(ids(&full.train), ids(&s.train));
        let a = subsample_train(&s, 3, 9).unwrap();
        let b = subsample_train(&s, 3, 9).unwrap();
        assert_eq!(a.train.len(), 3);
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(a.validation, s.validation);
        assert_eq!(a.test, s.test);
        assert!(subsample_train(&s, 0, 0).is_err());
        assert!(subsample_train(&s, 9, 0).is_err());
    }

    #[test]
    fn subsample_five_thousand_of_textedge() {
        let rs: Vec<_> = (0..144_931).map(rec).collect();
        let s = split_dataset(&rs, TEXTEDGE_FRACTIONS, 42).unwrap();
        let sub = subsample_train(&s, 5_000, 3).unwrap();
        assert_eq!(ids(&sub.train).len(), 5_000);
        assert!(ids(&sub.train).is_subset(&ids(&s.train)));
        assert_eq!(ids(&sub.validation), ids(&s.validation));
        assert_eq!(ids(&sub.test), ids(&s.test));
    }

    #[test]
    fn manifest_round_trip() {
        let rs: Vec<_> = (0..20).map(rec).collect();
        let s = split_dataset(&rs, (0.6, 0.2, 0.2), 3).unwrap();
        let back = apply_manifest(&rs, &s.manifest()).unwrap();
        assert_eq!(back.train, s.train);
        assert_eq!(back.validation, s.validation);
        assert_eq!(back.test, s.test);
        assert!(apply_manifest(&rs, "mp-999\ttrain\n").is_err());
        assert!(apply_manifest(&rs, "mp-1\tholdout\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_disjoint_exhaustive_partition(n in 3usize..200, seed in 0u64..1000, a in 0.1f64..0.8) {
            let rs: Vec<_> = (0..n).map(rec).collect();
            let rest = 1.0 - a;
            let s = split_dataset(&rs, (a, rest / 2.0, rest / 2.0), seed).unwrap();
            let (t, v, te) = (ids(&s.train), ids(&s.validation), ids(&s.test));
            proptest::prop_assert!(t.is_disjoint(&v) && t.is_disjoint(&te) && v.is_disjoint(&te));
            let all: BTreeSet<_> = t.union(&v).chain(te.iter()).cloned().collect();
            proptest::prop_assert_eq!(all, ids(&rs));
            proptest::prop_assert!((s.train.len() as f64 - a * n as f64).abs() <= 1.0);
            proptest::prop_assert!((s.validation.len() as f64 - rest / 2.0 * n as f64).abs() <= 1.0);
            proptest::prop_assert!((s.test.len() as f64 - rest / 2.0 * n as f64).abs() <= 1.0);
        }
    }
}
