use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{random_split, Dataset, InputLayout, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Column roles of a CSV dataset, as declared in a `*.schema.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub dense: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    pub tasks: Vec<TaskDerivation>,
    #[serde(default)]
    pub sensitive: Option<SensitiveColumn>,
    /// Field values treated as absent.
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    vec!["".into(), "?".into()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    Gt,
    Ge,
    Eq,
}

/// Binary label `column <op> value`; rows where it cannot be evaluated are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDerivation {
    pub name: String,
    pub column: String,
    pub op: PredicateOp,
    /// Number or string constant. Strings only support `eq`.
    pub value: Value,
    /// Compare the training-split z-score of the column instead of the raw value.
    #[serde(default)]
    pub zscore: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveColumn {
    pub column: String,
    /// Raw value to group code; unmapped values count as missing.
    pub encoding: BTreeMap<String, u8>,
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_reader(BufReader::new(file))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in self.dense.iter().chain(&self.categorical) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("feature column {name:?} declared twice")));
            }
        }
        if self.dense.is_empty() && self.categorical.is_empty() {
            return Err(Error::Config(format!(
                "schema {:?} declares no input features",
                self.name
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::Schema("at least one task derivation is required".into()));
        }
        let mut task_names = BTreeSet::new();
        for task in &self.tasks {
            if !task_names.insert(task.name.as_str()) {
                return Err(Error::Schema(format!("task {:?} declared twice", task.name)));
            }
            match &task.value {
                Value::Number(_) => {}
                Value::String(_) if task.op == PredicateOp::Eq && !task.zscore => {}
                other => {
                    return Err(Error::Schema(format!(
                        "task {:?}: unsupported constant {other} for {:?}",
                        task.name, task.op
                    )))
                }
            }
        }
        if let Some(s) = &self.sensitive {
            if s.encoding.values().any(|&v| v > 1) {
                return Err(Error::Schema("sensitive encoding must map to 0 or 1".into()));
            }
        }
        Ok(())
    }

    fn required_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.dense.iter().chain(&self.categorical).map(String::as_str).collect();
        cols.extend(self.tasks.iter().map(|t| t.column.as_str()));
        if let Some(s) = &self.sensitive {
            cols.push(&s.column);
        }
        cols
    }

    fn is_missing(&self, field: &str) -> bool {
        self.missing_tokens.iter().any(|m| m == field)
    }
}

/// Parsed CSV records with their source line numbers.
#[derive(Clone, Debug)]
pub struct RawTable {
    path: PathBuf,
    columns: HashMap<String, usize>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl RawTable {
    /// Reads a headered CSV and checks that every column the schema names exists.
    pub fn read(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(BufReader::new(file));
        let columns: HashMap<String, usize> = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        for col in schema.required_columns() {
            if !columns.contains_key(col) {
                return Err(Error::Schema(format!("{}: missing column {col:?}", path.display())));
            }
        }
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        Ok(RawTable { path, columns, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn field(&self, row: usize, column: &str) -> &str {
        let idx = self.columns[column];
        self.records[row].1.get(idx).unwrap_or("")
    }

    fn line(&self, row: usize) -> u64 {
        self.records[row].0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStats {
    pub mean: f64,
    pub sd: f64,
}

impl DenseStats {
    fn fit(values: &[f64]) -> DenseStats {
        if values.is_empty() {
            return DenseStats { mean: 0.0, sd: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        DenseStats { mean, sd }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

/// A schema plus statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub schema: Schema,
    pub dense_stats: Vec<DenseStats>,
    /// Observed training values per categorical column; value `i` encodes as `i + 1`.
    pub vocabularies: Vec<Vec<String>>,
    /// Reference statistics for z-score task predicates.
    pub task_stats: Vec<Option<DenseStats>>,
}

impl FeatureSpec {
    /// Fits standardization, vocabularies and z-score references on `rows` of `raw`.
    pub fn fit(schema: &Schema, raw: &RawTable, rows: &[usize]) -> Result<Self> {
        schema.validate()?;
        let task_stats = schema
            .tasks
            .iter()
            .map(|task| {
                task.zscore.then(|| {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter_map(|&r| {
                            let f = raw.field(r, &task.column);
                            (!schema.is_missing(f)).then(|| f.parse::<f64>().ok()).flatten()
                        })
                        .collect();
                    DenseStats::fit(&values)
                })
            })
            .collect();
        let mut spec = FeatureSpec {
            schema: schema.clone(),
            dense_stats: Vec::new(),
            vocabularies: Vec::new(),
            task_stats,
        };
        let kept: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| spec.derive_labels(raw, r).is_some())
            .collect();
        for col in &schema.dense {
            let values = kept
                .iter()
                .map(|&r| parse_dense(schema, raw, r, col))
                .collect::<Result<Vec<_>>>()?;
            spec.dense_stats.push(DenseStats::fit(&values));
        }
        for col in &schema.categorical {
            let vocab: BTreeSet<&str> = kept
                .iter()
                .map(|&r| raw.field(r, col))
                .filter(|f| !schema.is_missing(f))
                .collect();
            spec.vocabularies.push(vocab.into_iter().map(str::to_string).collect());
        }
        Ok(spec)
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout {
            dense: self.schema.dense.len(),
            vocab_sizes: self.vocabularies.iter().map(|v| v.len() + 1).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.schema.tasks.len()
    }

    fn derive_label(&self, task_idx: usize, field: &str) -> Option<u8> {
        if self.schema.is_missing(field) {
            return None;
        }
        let task = &self.schema.tasks[task_idx];
        let hit = match &task.value {
            Value::String(s) => field == s,
            Value::Number(n) => {
                let c = n.as_f64()?;
                let mut v: f64 = field.parse().ok()?;
                if let Some(stats) = &self.task_stats[task_idx] {
                    v = stats.standardize(v);
                }
                match task.op {
                    PredicateOp::Gt => v > c,
                    PredicateOp::Ge => v >= c,
                    PredicateOp::Eq => v == c,
                }
            }
            _ => return None,
        };
        Some(u8::from(hit))
    }

    fn derive_labels(&self, raw: &RawTable, row: usize) -> Option<Vec<u8>> {
        (0..self.schema.tasks.len())
            .map(|t| self.derive_label(t, raw.field(row, &self.schema.tasks[t].column)))
            .collect()
    }

    fn encode_sensitive(&self, field: &str) -> Option<u8> {
        let s = self.schema.sensitive.as_ref()?;
        if self.schema.is_missing(field) {
            return None;
        }
        s.encoding.get(field).copied()
    }

    /// Encodes `rows` of `raw`; rows whose labels cannot be derived are dropped and counted.
    pub fn encode(&self, raw: &RawTable, rows: &[usize], split: Split) -> Result<Dataset> {
        let schema = &self.schema;
        let t = schema.tasks.len();
        let mut dense = Vec::new();
        let mut categorical: Vec<Vec<usize>> = vec![Vec::new(); schema.categorical.len()];
        let mut labels = Vec::new();
        let mut sensitive = Vec::new();
        let mut rejected = 0;
        let lookups: Vec<HashMap<&str, usize>> = self
            .vocabularies
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i + 1)).collect())
            .collect();
        for &r in rows {
            let Some(row_labels) = self.derive_labels(raw, r) else {
                rejected += 1;
                continue;
            };
            for (col, stats) in schema.dense.iter().zip(&self.dense_stats) {
                dense.push(stats.standardize(parse_dense(schema, raw, r, col)?));
            }
            for ((col, lookup), out) in schema.categorical.iter().zip(&lookups).zip(&mut categorical) {
                out.push(lookup.get(raw.field(r, col)).copied().unwrap_or(0));
            }
            labels.extend(row_labels);
            let sens_field = schema.sensitive.as_ref().map_or("", |s| raw.field(r, &s.column));
            sensitive.push(self.encode_sensitive(sens_field));
        }
        if rejected > 0 {
            log::info!(
                "{}: rejected {rejected} rows with underivable labels",
                raw.path().display()
            );
        }
        let n = sensitive.len();
        let dense = Matrix::from_vec(n, schema.dense.len(), dense)?;
        Ok(Dataset::new(self.layout(), dense, categorical, labels, t, sensitive, split)?.with_rejected(rejected))
    }

    /// Writes `data` back to CSV in the raw column format this spec reads.
    ///
    /// Labels are written as representative raw values that satisfy (or fail) each
    /// derivation; dense values are de-standardized.
    pub fn write_csv(&self, data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let schema = &self.schema;
        let mut label_columns: Vec<&str> = Vec::new();
        for task in &schema.tasks {
            if label_columns.contains(&task.column.as_str()) {
                return Err(Error::Schema(format!(
                    "column {:?} feeds several tasks and cannot be written back",
                    task.column
                )));
            }
            label_columns.push(&task.column);
        }
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = schema.dense.iter().map(String::as_str).collect();
        header.extend(schema.categorical.iter().map(String::as_str));
        header.extend(&label_columns);
        if let Some(s) = &schema.sensitive {
            header.push(&s.column);
        }
        writer.write_record(&header)?;
        let missing = schema.missing_tokens.first().cloned().unwrap_or_default();
        for i in 0..data.len() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            for (j, stats) in self.dense_stats.iter().enumerate() {
                rec.push(format!("{}", stats.mean + stats.sd * data.dense().get(i, j)));
            }
            for (c, vocab) in self.vocabularies.iter().enumerate() {
                let idx = data.categorical()[c][i];
                rec.push(if idx == 0 {
                    "__oov__".to_string()
                } else {
                    vocab[idx - 1].clone()
                });
            }
            for (t, task) in schema.tasks.iter().enumerate() {
                rec.push(self.representative(t, task, data.label(i, t)));
            }
            if let Some(s) = &schema.sensitive {
                rec.push(match data.sensitive()[i] {
                    Some(code) => s
                        .encoding
                        .iter()
                        .find(|(_, &v)| v == code)
                        .map(|(k, _)| k.clone())
                        .unwrap_or_else(|| missing.clone()),
                    None => missing.clone(),
                });
            }
            writer.write_record(&rec)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn representative(&self, t: usize, task: &TaskDerivation, label: u8) -> String {
        match &task.value {
            Value::String(s) if label == 1 => s.clone(),
            Value::String(s) => format!("not {s}"),
            Value::Number(n) => {
                let c = n.as_f64().unwrap_or(0.0);
                let z = match (task.op, label) {
                    (PredicateOp::Gt, 1) | (PredicateOp::Eq, 0) => c + 1.0,
                    (PredicateOp::Gt, _) | (PredicateOp::Ge, 1) | (PredicateOp::Eq, _) => c,
                    (PredicateOp::Ge, _) => c - 1.0,
                };
                let raw = match &self.task_stats[t] {
                    Some(stats) => stats.mean + stats.sd * z,
                    None => z,
                };
                format!("{raw}")
            }
            other => other.to_string(),
        }
    }
}

fn parse_dense(schema: &Schema, raw: &RawTable, row: usize, col: &str) -> Result<f64> {
    let field = raw.field(row, col);
    field.parse::<f64>().map_err(|_| Error::Row {
        path: raw.path().to_path_buf(),
        line: raw.line(row),
        message: if schema.is_missing(field) {
            format!("missing value in dense column {col:?}")
        } else {
            format!("cannot parse {field:?} in dense column {col:?} as a number")
        },
    })
}

/// Reads `csv_path` and encodes every row with an already fitted spec.
pub fn load_dataset(csv_path: impl AsRef<Path>, spec: &FeatureSpec, split: Split) -> Result<Dataset> {
    let raw = RawTable::read(csv_path, &spec.schema)?;
    let rows: Vec<usize> = (0..raw.len()).collect();
    spec.encode(&raw, &rows, split)
}

/// How train and test data are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitConfig {
    /// Separate files shipped with the dataset.
    Provided { train: PathBuf, test: PathBuf },
    /// One file split at random.
    Random {
        file: PathBuf,
        train_fraction: f64,
        seed: u64,
    },
}

impl SplitConfig {
    /// Resolves relative paths against `base`.
    pub fn resolve(&self, base: &Path) -> SplitConfig {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        match self {
            SplitConfig::Provided { train, test } => SplitConfig::Provided {
                train: r(train),
                test: r(test),
            },
            SplitConfig::Random {
                file,
                train_fraction,
                seed,
            } => SplitConfig::Random {
                file: r(file),
                train_fraction: *train_fraction,
                seed: *seed,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub spec: FeatureSpec,
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads train and test data; all statistics come from the training rows only.
pub fn load_split(schema: &Schema, split: &SplitConfig) -> Result<LoadedData> {
    match split {
        SplitConfig::Provided { train, test } => {
            let raw = RawTable::read(train, schema)?;
            let rows: Vec<usize> = (0..raw.len()).collect();
            let spec = FeatureSpec::fit(schema, &raw, &rows)?;
            let train = spec.encode(&raw, &rows, Split::Train)?;
            let test = load_dataset(test, &spec, Split::Test)?;
            Ok(LoadedData { spec, train, test })
        }
        SplitConfig::Random {
            file,
            train_fraction,
            seed,
        } => {
            let raw = RawTable::read(file, schema)?;
            let (train_rows, test_rows) = random_split(raw.len(), *train_fraction, *seed)?;
            let spec = FeatureSpec::fit(schema, &raw, &train_rows)?;
            let train = spec.encode(&raw, &train_rows, Split::Train)?;
            let test = spec.encode(&raw, &test_rows, Split::Test)?;
            Ok(LoadedData { spec, train, test })
        }
    }
}
