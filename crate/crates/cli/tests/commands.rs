use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llmprop::synth::{synthetic_records, to_csv};

const TINY: &[&str] = &[
    "model.hidden_size=8",
    "model.num_layers=1",
    "model.num_heads=2",
    "model.ffn_size=16",
    "model.dropout=0.0",
    "tokenizer.vocab_size=300",
    "tokenizer.max_length=96",
    "train.epochs=2",
    "train.batch_size=8",
    "train.lr_max=0.003",
    "corpus.fractions=0.6,0.2,0.2",
];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(n: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data.csv"), to_csv(&synthetic_records(n, 11))).unwrap();
        fs::write(
            dir.path().join("run.cfg"),
            format!("# toy run\ncorpus.path = {}\n", dir.path().join("data.csv").display()),
        )
        .unwrap();
        Fixture { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, command: &str, out: &str, sets: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_llmprop"));
        cmd.arg(command)
            .arg("--config")
            .arg(self.path("run.cfg"))
            .arg("--out")
            .arg(self.path(out));
        for s in TINY.iter().chain(sets) {
            cmd.arg("--set").arg(s);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, command: &str, out: &str, sets: &[&str]) -> String {
        let o = self.run(command, out, sets);
        assert!(
            o.status.success(),
            "{command} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn read(&self, p: &str) -> String {
        fs::read_to_string(self.path(p)).unwrap()
    }
}

fn no_partials(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|it| it.flatten().all(|e| !e.file_name().to_string_lossy().starts_with(".partial-")))
        .unwrap_or(true)
}

fn data_rows(tsv: &str) -> Vec<Vec<String>> {
    tsv.lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

#[test]
fn prepare_writes_artifacts_and_is_deterministic() {
    let fx = Fixture::new(60);
    let stdout = fx.ok("prepare", "p1", &[]);
    assert!(stdout.contains("records 60"));
    for f in [
        "config.resolved",
        "split_manifest.tsv",
        "vocab.tsv",
        "stats.json",
        "processed/train.tsv",
        "processed/validation.tsv",
        "processed/test.tsv",
    ] {
        assert!(fx.path("p1").join(f).exists(), "{f} missing");
    }
    assert!(no_partials(&fx.path("p1")));
    let stats: serde_json::Value = serde_json::from_str(&fx.read("p1/stats.json")).unwrap();
    assert_eq!(stats["train"], 36);
    assert_eq!(stats["validation"], 12);
    assert_eq!(stats["test"], 12);
    assert!(stats["num_substitutions"].as_u64().unwrap() >= 60);
    // processed cache carries the substituted text
    assert!(fx.read("p1/processed/train.tsv").contains("[NUM]"));

    fx.ok("prepare", "p2", &[]);
    assert_eq!(fx.read("p1/split_manifest.tsv"), fx.read("p2/split_manifest.tsv"));
    fx.ok("prepare", "p3", &["corpus.split_seed=9"]);
    assert_ne!(fx.read("p1/split_manifest.tsv"), fx.read("p3/split_manifest.tsv"));

    // the frozen config resolves back to the same run
    let frozen = fx.read("p1/config.resolved");
    assert!(frozen.contains("train.epochs = 2\n"));
    assert!(frozen.contains("tokenizer.max_length = 96\n"));
}

#[test]
fn textedge_proportions_by_default() {
    let fx = Fixture::new(400);
    fx.ok("prepare", "p", &["corpus.fractions=textedge"]);
    let stats: serde_json::Value = serde_json::from_str(&fx.read("p/stats.json")).unwrap();
    // round(400 * 125098/144931) = 345, round(400 * 9945/144931) = 27
    assert_eq!(stats["train"], 345);
    assert_eq!(stats["validation"], 27);
    assert_eq!(stats["test"], 28);
}

#[test]
fn failures_exit_nonzero_with_category_and_leave_nothing() {
    let fx = Fixture::new(10);
    fs::write(fx.path("empty.csv"), "id,formula,description,band_gap,volume,is_gap_direct\n").unwrap();
    let o = fx.run("prepare", "e", &[&format!("corpus.path={}", fx.path("empty.csv").display())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(no_partials(&fx.path("e")));
    assert!(!fx.path("e/split_manifest.tsv").exists());

    let o = fx.run("prepare", "u", &["train.epoch=3"]);
    assert_eq!(o.status.code(), Some(2));

    let o = fx.run("prepare", "m", &["corpus.path=/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(3));

    let o = fx.run("sweep", "s", &["sweep.dimension=scaler", "sweep.values=z_score,cube_root"]);
    assert_eq!(o.status.code(), Some(2));

    let o = fx.run("ablate", "a", &["ablate.toggles=dropout"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_evaluate_predict_zero_shot_transfer() {
    let fx = Fixture::new(50);
    let out = fx.ok("train", "t", &[]);
    assert!(out.contains("band_gap MAE"));
    for f in [
        "config.resolved",
        "metrics.json",
        "metrics.tsv",
        "history.tsv",
        "train_config.json",
        "checkpoints/best/weights.bin",
        "checkpoints/last/meta.json",
    ] {
        assert!(fx.path("t").join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fx.read("t/metrics.json")).unwrap();
    assert_eq!(report["metric_name"], "MAE");
    assert_eq!(report["checkpoint_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["split_manifest_hash"].as_str().unwrap().len(), 64);
    assert_eq!(fx.read("t/history.tsv").lines().count(), 3);

    // evaluate the saved checkpoint on the same split: identical numbers
    let best = fx.path("t/checkpoints/best");
    fx.ok("evaluate", "ev", &[&format!("eval.checkpoint={}", best.display())]);
    let ev: serde_json::Value = serde_json::from_str(&fx.read("ev/metrics.json")).unwrap();
    assert_eq!(ev["value"], report["value"]);
    assert_eq!(ev["checkpoint_hash"], report["checkpoint_hash"]);

    let recs = synthetic_records(3, 99);
    let input: String = recs.iter().map(|r| format!("{}\n", r.description)).collect();
    fs::write(fx.path("in.txt"), input).unwrap();
    let stdout = fx.ok(
        "predict",
        "pr",
        &[
            &format!("predict.checkpoint={}", best.display()),
            &format!("predict.input={}", fx.path("in.txt").display()),
        ],
    );
    let preds: Vec<f64> = fx.read("pr/predictions.txt").lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(preds.len(), 3);
    assert_eq!(stdout.lines().count(), 3);
    assert!(preds.iter().all(|p| p.is_finite()));

    fx.ok(
        "zero-shot",
        "zs",
        &[&format!("zero_shot.checkpoint={}", best.display()), "train.task=volume"],
    );
    let zs: serde_json::Value = serde_json::from_str(&fx.read("zs/metrics.json")).unwrap();
    assert_eq!(zs["task"], "volume");
    assert!(!zs["notes"].as_array().unwrap().is_empty());

    fx.ok(
        "transfer",
        "tr",
        &[&format!("transfer.source={}", best.display()), "train.task=is_gap_direct"],
    );
    let tr: serde_json::Value = serde_json::from_str(&fx.read("tr/metrics.json")).unwrap();
    assert_eq!(tr["metric_name"], "AUC");
    assert!(fx.path("tr/checkpoints/best/meta.json").exists());
}

#[test]
fn two_processes_produce_identical_tables() {
    let fx = Fixture::new(40);
    fx.ok("train", "a", &[]);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_llmprop"));
    // second run from the frozen config alone, in deterministic mode
    cmd.arg("train")
        .arg("--config")
        .arg(fx.path("a/config.resolved"))
        .arg("--out")
        .arg(fx.path("b"))
        .env("LLMPROP_DETERMINISTIC", "1");
    assert!(cmd.output().unwrap().status.success());
    assert_eq!(fx.read("a/metrics.tsv"), fx.read("b/metrics.tsv"));
    assert_eq!(fx.read("a/history.tsv"), fx.read("b/history.tsv"));
    assert_eq!(fx.read("a/config.resolved"), fx.read("b/config.resolved"));
}

#[test]
fn ablation_row_contract() {
    let fx = Fixture::new(30);
    fx.ok("ablate", "none", &["ablate.toggles=", "train.epochs=1"]);
    let rows = data_rows(&fx.read("none/ablation.tsv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "baseline");

    fx.ok("ablate", "all", &["train.epochs=1"]);
    let rows = data_rows(&fx.read("all/ablation.tsv"));
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        labels,
        [
            "baseline",
            "+modified_tokenizer",
            "+label_scaling",
            "+cls_token",
            "+num_token",
            "+ang_token",
            "+stopwords",
            "+all"
        ]
    );
    assert!(rows.iter().all(|r| r[8] == "ok"));
    assert!(fx.read("all/ablation.txt").contains("+all"));
    assert!(fx.path("all/runs/baseline/checkpoints/best").exists());

    fx.ok(
        "ablate",
        "cls",
        &["train.epochs=1", "train.task=is_gap_direct", "ablate.toggles=label_scaling,num_token"],
    );
    let rows = data_rows(&fx.read("cls/ablation.tsv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][0], "+label_scaling");
    assert_eq!(rows[1][8], "unsupported");
    assert_eq!(rows[1][3], "NA");
    assert_eq!(rows[2][8], "ok");
}

#[test]
fn sweeps_emit_one_row_per_value() {
    let fx = Fixture::new(30);
    fx.ok(
        "sweep",
        "sc",
        &["train.epochs=1", "sweep.dimension=scaler", "sweep.values=z_score,min_max,log_norm"],
    );
    let rows = data_rows(&fx.read("sc/sweep.tsv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(fx.read("sc/sweep.dat").lines().count(), 4);
    assert!(fx.path("sc/plot_sweep.py").exists());

    let out = fx.ok(
        "sweep",
        "ml",
        &["train.epochs=1", "sweep.dimension=max_length", "sweep.values=16,48,96"],
    );
    assert!(out.contains("monotone in max_length:"));
    assert_eq!(data_rows(&fx.read("ml/sweep.tsv")).len(), 3);

    fx.ok(
        "sweep",
        "ts",
        &["train.epochs=1", "sweep.dimension=train_size", "sweep.values=6,12"],
    );
    let rows = data_rows(&fx.read("ts/sweep.tsv"));
    assert_eq!(rows.len(), 2);
    assert!(fx.path("ts/runs/train_size-6/checkpoints/best").exists());

    let o = fx.run("sweep", "bad", &["sweep.dimension=train_size", "sweep.values=5000"]);
    assert_eq!(o.status.code(), Some(2));
}
