//! Preprocessing ablations and one-dimensional sweeps.

use llmprop::metrics::{MetricName, MetricsReport};
use llmprop::trainer::metric_for;
use llmprop::{DatasetSplit, ScaleMethod, Task};

use crate::{
    load_records, make_split, sized_split, table_cells, task, train_and_test, CliError, Config, Staging, TABLE_HEADER,
};

pub const TOGGLES: [&str; 6] = [
    "modified_tokenizer",
    "label_scaling",
    "cls_token",
    "num_token",
    "ang_token",
    "stopwords",
];

/// Config overrides for the baseline: stock vocabulary, raw labels, no
/// [CLS], no [NUM]/[ANG], stopwords kept.
const BASELINE: &[(&str, &str)] = &[
    ("tokenizer.kind", "stock"),
    ("train.scaler", "identity"),
    ("prep.cls", "false"),
    ("prep.num", "false"),
    ("prep.ang", "false"),
    ("prep.stopwords", "false"),
];

fn apply_toggle(cfg: &mut Config, toggle: &str, base: &Config) -> Result<(), CliError> {
    match toggle {
        "modified_tokenizer" => cfg.set("tokenizer.kind", "trained"),
        "label_scaling" => {
            let s = match base.raw("train.scaler") {
                "identity" | "none" => "z_score",
                s => s,
            };
            cfg.set("train.scaler", s)
        }
        "cls_token" => cfg.set("prep.cls", "true"),
        "num_token" => cfg.set("prep.num", "true"),
        "ang_token" => cfg.set("prep.ang", "true"),
        "stopwords" => cfg.set("prep.stopwords", "true"),
        t => Err(CliError::Config(format!("unknown ablation toggle {t:?}; expected one of {}", TOGGLES.join(", ")))),
    }
}

/// Row names and configs: baseline, then each toggle alone, then all.
pub fn ablation_plan(base: &Config, toggles: &[String]) -> Result<Vec<(String, Vec<String>, Config)>, CliError> {
    let mut baseline = base.clone();
    for (k, v) in BASELINE {
        baseline.set(k, v)?;
    }
    let mut plan = vec![("baseline".to_string(), Vec::new(), baseline.clone())];
    for t in toggles {
        let mut c = baseline.clone();
        apply_toggle(&mut c, t, base)?;
        plan.push((format!("+{t}"), vec![t.clone()], c));
    }
    if !toggles.is_empty() {
        let mut c = baseline.clone();
        for t in toggles {
            apply_toggle(&mut c, t, base)?;
        }
        plan.push(("+all".to_string(), toggles.to_vec(), c));
    }
    Ok(plan)
}

struct Cell {
    label: String,
    report: Option<MetricsReport>,
    status: String,
}

fn run_cell(cfg: &Config, split: &DatasetSplit, staging: &Staging, dir: &str) -> Result<MetricsReport, CliError> {
    staging.write(&format!("{dir}/{}", crate::FROZEN_CONFIG), cfg.frozen())?;
    let run_dir = staging.path().join(dir);
    let (_, report) = train_and_test(cfg, split, &run_dir)?;
    staging.write(&format!("{dir}/metrics.json"), report.to_json() + "\n")?;
    Ok(report)
}

fn text_table(title: &str, first: &str, cells: &[Cell]) -> String {
    let width = cells.iter().map(|c| c.label.len()).max().unwrap_or(0).max(first.len());
    let mut s = format!("{title}\n{first:<width$}  value\n");
    for c in cells {
        let v = match &c.report {
            Some(r) => format!("{:.4} {} ({})", r.value, r.units, r.metric_name.as_str()),
            None => c.status.clone(),
        };
        s.push_str(&format!("{:<width$}  {v}\n", c.label));
    }
    s
}

fn tsv_table(first: &str, task: Task, cells: &[Cell]) -> String {
    let mut s = format!("{first}\t{TABLE_HEADER}\n");
    for c in cells {
        s.push_str(&format!("{}\t{}\n", c.label, table_cells(c.report.as_ref(), task, &c.status)));
    }
    s
}

pub fn cmd_ablate(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let task = task(cfg)?;
    let toggles = cfg.list("ablate.toggles");
    let plan = ablation_plan(cfg, &toggles)?;
    let loaded = load_records(cfg)?;
    let split = sized_split(cfg, &make_split(cfg, &loaded.records)?)?;
    staging.write("split_manifest.tsv", split.manifest())?;

    let mut cells = Vec::new();
    for (label, on, row_cfg) in &plan {
        let dir = format!("runs/{}", label.trim_start_matches('+'));
        let cell = if task.is_classification() && on.len() == 1 && on[0] == "label_scaling" {
            Cell {
                label: label.clone(),
                report: None,
                status: "unsupported".into(),
            }
        } else {
            let report = run_cell(row_cfg, &split, staging, &dir)?;
            Cell {
                label: label.clone(),
                report: Some(report),
                status: "ok".into(),
            }
        };
        cells.push(cell);
    }
    staging.write("ablation.tsv", tsv_table("row", task, &cells))?;
    let text = text_table(&format!("ablation on {}", task.name()), "row", &cells);
    staging.write("ablation.txt", &text)?;
    Ok(text.lines().map(String::from).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDimension {
    TrainSize,
    MaxLength,
    Scaler,
}

impl SweepDimension {
    pub fn parse(s: &str) -> Result<SweepDimension, CliError> {
        match s {
            "train_size" => Ok(SweepDimension::TrainSize),
            "max_length" => Ok(SweepDimension::MaxLength),
            "scaler" => Ok(SweepDimension::Scaler),
            d => Err(CliError::Config(format!(
                "sweep.dimension = {d:?}; expected train_size, max_length or scaler"
            ))),
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepDimension::TrainSize => "train.train_size",
            SweepDimension::MaxLength => "tokenizer.max_length",
            SweepDimension::Scaler => "train.scaler",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepDimension::TrainSize => "train_size",
            SweepDimension::MaxLength => "max_length",
            SweepDimension::Scaler => "scaler",
        }
    }
}

fn check_value(dim: SweepDimension, v: &str, cfg: &Config, split: &DatasetSplit) -> Result<(), CliError> {
    let bad = |why: String| CliError::Config(format!("sweep value {v:?} invalid for {}: {why}", dim.name()));
    match dim {
        SweepDimension::Scaler => ScaleMethod::parse(v).map(|_| ()).ok_or_else(|| bad("unknown scaler".into())),
        SweepDimension::TrainSize => match v.parse::<usize>() {
            Ok(n) if n >= 1 && n <= split.train.len() => Ok(()),
            Ok(n) => Err(bad(format!("{n} outside 1..={}", split.train.len()))),
            Err(e) => Err(bad(e.to_string())),
        },
        SweepDimension::MaxLength => {
            let max: usize = cfg.parse("model.max_positions")?;
            match v.parse::<usize>() {
                Ok(n) if n >= 1 && n <= max => Ok(()),
                Ok(n) => Err(bad(format!("{n} outside 1..={max}"))),
                Err(e) => Err(bad(e.to_string())),
            }
        }
    }
}

/// Whether the metric never gets worse as the (numeric) value grows.
pub fn monotone(metric: MetricName, points: &[(f64, f64)]) -> bool {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.windows(2).all(|w| !metric.is_better(w[0].1, w[1].1))
}

const PLOT_SCRIPT: &str = r##"# Optional: python3 plot_sweep.py sweep.dat  (needs matplotlib)
import sys
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep.dat"
rows = [l.split("\t") for l in open(path) if l.strip() and not l.startswith("#")]
header, rows = rows[0], rows[1:]
xs = [r[0] for r in rows]
ys = [float(r[1]) for r in rows]
plt.plot(range(len(xs)), ys, marker="o")
plt.xticks(range(len(xs)), xs)
plt.xlabel(header[0])
plt.ylabel(header[1].strip())
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150, bbox_inches="tight")
"##;

pub fn cmd_sweep(cfg: &Config, staging: &Staging) -> Result<Vec<String>, CliError> {
    let dim = SweepDimension::parse(cfg.required("sweep.dimension")?)?;
    let values = cfg.list("sweep.values");
    if values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    let task = task(cfg)?;
    let loaded = load_records(cfg)?;
    let split = make_split(cfg, &loaded.records)?;
    for v in &values {
        check_value(dim, v, cfg, &split)?;
    }
    staging.write("split_manifest.tsv", split.manifest())?;

    let mut cells = Vec::new();
    for v in &values {
        let label = v.clone();
        if dim == SweepDimension::Scaler && task.is_classification() {
            cells.push(Cell {
                label,
                report: None,
                status: "unsupported".into(),
            });
            continue;
        }
        let mut c = cfg.clone();
        c.set(dim.key(), v)?;
        let cell_split = sized_split(&c, &split)?;
        let report = run_cell(&c, &cell_split, staging, &format!("runs/{}-{v}", dim.name()))?;
        cells.push(Cell {
            label,
            report: Some(report),
            status: "ok".into(),
        });
    }

    staging.write("sweep.tsv", tsv_table(dim.name(), task, &cells))?;
    let metric = metric_for(task);
    let mut dat = format!("{}\t{}\n", dim.name(), metric.as_str());
    for c in &cells {
        if let Some(r) = &c.report {
            dat.push_str(&format!("{}\t{}\n", c.label, r.value));
        }
    }
    staging.write("sweep.dat", dat)?;
    staging.write("plot_sweep.py", PLOT_SCRIPT)?;

    let mut text = text_table(&format!("{} sweep on {}", dim.name(), task.name()), dim.name(), &cells);
    if dim != SweepDimension::Scaler {
        let points: Vec<(f64, f64)> = cells
            .iter()
            .filter_map(|c| c.report.as_ref().map(|r| (c.label.parse().unwrap_or(f64::NAN), r.value)))
            .collect();
        let m = monotone(metric, &points);
        text.push_str(&format!(
            "monotone in {}: {}\n",
            dim.name(),
            if m { "yes" } else { "no" }
        ));
    }
    staging.write("sweep.txt", &text)?;
    Ok(text.lines().map(String::from).collect())
}
