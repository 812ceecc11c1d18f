//! The append-only `runs.csv` table.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use mtfair_core::metrics::RunMetrics;
use mtfair_core::trainer::{Method, TrainConfig};

use crate::error::{Result, SweepError};

pub const SCHEMA_VERSION: u32 = 1;

/// Per-task cells of a run row; `None` is an empty cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskCells {
    pub err: Option<f64>,
    pub fpr_gap: Option<f64>,
    pub tpr_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub task_weights: Vec<f64>,
    pub fairness_weights: Vec<f64>,
    pub head_to_shared_ratios: Vec<f64>,
    pub tasks: Vec<TaskCells>,
    pub err_mean: Option<f64>,
    pub fpr_gap_mean: Option<f64>,
    pub arfg: Option<f64>,
    pub are: Option<f64>,
    pub flags: Vec<String>,
    pub seconds: f64,
    /// The full training config as JSON.
    pub config_json: String,
}

impl RunRow {
    /// Row for a finished run. Fairness weights are echoed as they were applied.
    pub fn from_metrics(run_id: String, config: &TrainConfig, metrics: &RunMetrics, seconds: f64) -> Self {
        let mut row = Self::empty(run_id, config, seconds);
        row.tasks = metrics
            .tasks
            .iter()
            .map(|e| TaskCells {
                err: Some(e.err),
                fpr_gap: e.fpr_gap,
                tpr_gap: e.tpr_gap,
            })
            .collect();
        row.err_mean = Some(metrics.err_mean);
        row.fpr_gap_mean = metrics.fpr_gap_mean;
        row.arfg = metrics.arfg;
        row.are = Some(metrics.are);
        row.flags = metrics.flags.clone();
        row
    }

    /// Row for a run that did not produce metrics.
    pub fn failed(run_id: String, config: &TrainConfig, message: &str, seconds: f64) -> Self {
        let mut row = Self::empty(run_id, config, seconds);
        row.flags = vec![format!("failed: {message}")];
        row
    }

    fn empty(run_id: String, config: &TrainConfig, seconds: f64) -> Self {
        let t = config.num_tasks();
        RunRow {
            run_id,
            method: config.method,
            seed: config.seed,
            task_weights: config.task_weights.clone(),
            fairness_weights: config.effective_fairness_weights(),
            head_to_shared_ratios: config.head_to_shared_ratios.clone(),
            tasks: vec![TaskCells::default(); t],
            err_mean: None,
            fpr_gap_mean: None,
            arfg: None,
            are: None,
            flags: Vec::new(),
            seconds,
            config_json: serde_json::to_string(config).unwrap_or_default(),
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// The row with identity and timing cleared, for reproducibility checks.
    pub fn metrics_only(&self) -> RunRow {
        RunRow {
            run_id: String::new(),
            seconds: 0.0,
            ..self.clone()
        }
    }
}

fn header(t: usize) -> Vec<String> {
    let mut h: Vec<String> = ["schema_version", "run_id", "method", "seed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["w", "lambda", "r"] {
        h.extend((1..=t).map(|i| format!("{prefix}_{i}")));
    }
    for i in 1..=t {
        h.extend([format!("err_{i}"), format!("fpr_gap_{i}"), format!("tpr_gap_{i}")]);
    }
    h.extend(
        [
            "err_mean",
            "fpr_gap_mean",
            "arfg",
            "are",
            "flags",
            "seconds",
            "config_json",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn record(row: &RunRow) -> Vec<String> {
    let mut r = vec![
        SCHEMA_VERSION.to_string(),
        row.run_id.clone(),
        row.method.to_string(),
        row.seed.to_string(),
    ];
    for values in [&row.task_weights, &row.fairness_weights, &row.head_to_shared_ratios] {
        r.extend(values.iter().map(|v| format!("{v}")));
    }
    for c in &row.tasks {
        r.extend([cell(c.err), cell(c.fpr_gap), cell(c.tpr_gap)]);
    }
    r.extend([
        cell(row.err_mean),
        cell(row.fpr_gap_mean),
        cell(row.arfg),
        cell(row.are),
        row.flags.join(";"),
        format!("{}", row.seconds),
        row.config_json.clone(),
    ]);
    r
}

fn tasks_in_header(h: &csv::StringRecord) -> usize {
    h.iter().filter(|c| c.starts_with("err_") && *c != "err_mean").count()
}

fn parse_row(path: &Path, h: &csv::StringRecord, rec: &csv::StringRecord) -> Result<RunRow> {
    let bad = |message: String| SweepError::RunsTable {
        path: path.to_path_buf(),
        message,
    };
    let get = |name: &str| -> Result<&str> {
        let idx = h
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| bad(format!("missing column {name}")))?;
        Ok(rec.get(idx).unwrap_or(""))
    };
    let num = |name: &str| -> Result<f64> {
        get(name)?
            .parse()
            .map_err(|_| bad(format!("column {name}: not a number")))
    };
    let opt = |name: &str| -> Result<Option<f64>> {
        let s = get(name)?;
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| bad(format!("column {name}: not a number")))
        }
    };
    if get("schema_version")? != SCHEMA_VERSION.to_string() {
        return Err(bad(format!("unsupported schema version {}", get("schema_version")?)));
    }
    let t = tasks_in_header(h);
    let list = |prefix: &str| -> Result<Vec<f64>> { (1..=t).map(|i| num(&format!("{prefix}_{i}"))).collect() };
    let tasks = (1..=t)
        .map(|i| {
            Ok(TaskCells {
                err: opt(&format!("err_{i}"))?,
                fpr_gap: opt(&format!("fpr_gap_{i}"))?,
                tpr_gap: opt(&format!("tpr_gap_{i}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let flags = get("flags")?;
    Ok(RunRow {
        run_id: get("run_id")?.to_string(),
        method: get("method")?.parse()?,
        seed: get("seed")?
            .parse()
            .map_err(|_| bad("column seed: not an integer".into()))?,
        task_weights: list("w")?,
        fairness_weights: list("lambda")?,
        head_to_shared_ratios: list("r")?,
        tasks,
        err_mean: opt("err_mean")?,
        fpr_gap_mean: opt("fpr_gap_mean")?,
        arfg: opt("arfg")?,
        are: opt("are")?,
        flags: if flags.is_empty() {
            Vec::new()
        } else {
            flags.split(';').map(str::to_string).collect()
        },
        seconds: num("seconds")?,
        config_json: get("config_json")?.to_string(),
    })
}

/// Reads every row of a runs table.
pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let file = File::open(path).map_err(|e| SweepError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let h = reader.headers()?.clone();
    reader.records().map(|rec| parse_row(path, &h, &rec?)).collect()
}

/// Appender for `runs.csv`. Rows are flushed as they arrive; existing rows are never rewritten.
pub struct RunsTable {
    path: PathBuf,
    num_tasks: usize,
    writer: csv::Writer<File>,
    ids: HashSet<String>,
}

impl RunsTable {
    /// Opens (or creates) the table; an existing file must have the same task count.
    pub fn open(path: &Path, num_tasks: usize) -> Result<Self> {
        let mut ids = HashSet::new();
        let exists = path.is_file() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        if exists {
            let file = File::open(path).map_err(|e| SweepError::io(path, e))?;
            let mut reader = csv::Reader::from_reader(file);
            let h = reader.headers()?.clone();
            if tasks_in_header(&h) != num_tasks || h.get(0) != Some("schema_version") {
                return Err(SweepError::RunsTable {
                    path: path.to_path_buf(),
                    message: format!("existing header does not match a {num_tasks}-task table"),
                });
            }
            for rec in reader.records() {
                let rec = rec?;
                ids.insert(rec.get(1).unwrap_or("").to_string());
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| SweepError::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| SweepError::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            writer.write_record(header(num_tasks))?;
            writer.flush().map_err(|e| SweepError::io(path, e))?;
        }
        Ok(RunsTable {
            path: path.to_path_buf(),
            num_tasks,
            writer,
            ids,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.ids.contains(run_id)
    }

    /// Appends `row`, suffixing its id if already taken. Returns the id used.
    pub fn append(&mut self, mut row: RunRow) -> Result<String> {
        if row.num_tasks() != self.num_tasks {
            return Err(SweepError::RunsTable {
                path: self.path.clone(),
                message: format!("row has {} tasks, table has {}", row.num_tasks(), self.num_tasks),
            });
        }
        if self.ids.contains(&row.run_id) {
            let base = row.run_id.clone();
            let mut k = 2;
            while self.ids.contains(&format!("{base}-{k}")) {
                k += 1;
            }
            row.run_id = format!("{base}-{k}");
        }
        self.writer.write_record(record(&row))?;
        self.writer.flush().map_err(|e| SweepError::io(&self.path, e))?;
        self.ids.insert(row.run_id.clone());
        Ok(row.run_id)
    }
}
