//! Datasets, mini-batches, CSV ingestion and the synthetic generator.

mod schema;
mod split;
mod synth;

pub use schema::{
    load_dataset, load_split, DenseStats, FeatureSpec, LoadedData, PredicateOp, RawTable, Schema, SensitiveColumn,
    SplitConfig, TaskDerivation,
};
pub use split::{random_split, shuffled_batches, BatchPlan};
pub use synth::{synth_generate, GroupFeature, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Shape of the model input: dense column count and per-categorical vocabulary sizes
/// (vocabulary sizes include the reserved out-of-vocabulary index 0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub dense: usize,
    pub vocab_sizes: Vec<usize>,
}

impl InputLayout {
    pub fn dense_only(dense: usize) -> Self {
        InputLayout {
            dense,
            vocab_sizes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dense == 0 && self.vocab_sizes.is_empty()
    }
}

/// Encoded examples: standardized dense features, categorical indices,
/// `n x T` binary labels and an optional binary sensitive attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    layout: InputLayout,
    dense: Matrix,
    categorical: Vec<Vec<usize>>,
    labels: Vec<u8>,
    num_tasks: usize,
    sensitive: Vec<Option<u8>>,
    split: Split,
    rejected_rows: usize,
}

impl Dataset {
    pub fn new(
        layout: InputLayout,
        dense: Matrix,
        categorical: Vec<Vec<usize>>,
        labels: Vec<u8>,
        num_tasks: usize,
        sensitive: Vec<Option<u8>>,
        split: Split,
    ) -> Result<Self> {
        let n = sensitive.len();
        if num_tasks == 0 {
            return Err(Error::Config("a dataset needs at least one task".into()));
        }
        if dense.rows() != n || dense.cols() != layout.dense {
            return Err(Error::shape(format!(
                "dense block {:?} for {n} rows and {} dense columns",
                dense.shape(),
                layout.dense
            )));
        }
        if categorical.len() != layout.vocab_sizes.len() {
            return Err(Error::shape(format!(
                "{} categorical columns, layout declares {}",
                categorical.len(),
                layout.vocab_sizes.len()
            )));
        }
        for (col, vocab) in categorical.iter().zip(&layout.vocab_sizes) {
            if col.len() != n {
                return Err(Error::shape("categorical column length mismatch"));
            }
            if let Some(&bad) = col.iter().find(|&&v| v >= *vocab) {
                return Err(Error::Index {
                    index: bad,
                    len: *vocab,
                });
            }
        }
        if labels.len() != n * num_tasks {
            return Err(Error::shape(format!(
                "{} labels for {n} rows x {num_tasks} tasks",
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        if sensitive.iter().flatten().any(|&a| a > 1) {
            return Err(Error::Contract("sensitive attribute must be 0 or 1".into()));
        }
        Ok(Dataset {
            layout,
            dense,
            categorical,
            labels,
            num_tasks,
            sensitive,
            split,
            rejected_rows: 0,
        })
    }

    pub(crate) fn with_rejected(mut self, rejected: usize) -> Self {
        self.rejected_rows = rejected;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.sensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensitive.is_empty()
    }

    pub fn layout(&self) -> &InputLayout {
        &self.layout
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn dense(&self) -> &Matrix {
        &self.dense
    }

    pub fn categorical(&self) -> &[Vec<usize>] {
        &self.categorical
    }

    pub fn label(&self, row: usize, task: usize) -> u8 {
        self.labels[row * self.num_tasks + task]
    }

    pub fn task_labels(&self, task: usize) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i, task)).collect()
    }

    pub fn sensitive(&self) -> &[Option<u8>] {
        &self.sensitive
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Rows dropped at load time because a task label could not be derived.
    pub fn rejected_rows(&self) -> usize {
        self.rejected_rows
    }

    /// Copy of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let batch = self.batch(rows)?;
        Ok(Dataset {
            layout: self.layout.clone(),
            dense: batch.dense,
            categorical: batch.categorical,
            labels: batch.labels,
            num_tasks: self.num_tasks,
            sensitive: batch.sensitive,
            split: self.split,
            rejected_rows: 0,
        })
    }

    /// Same examples with only the label column of `task` (single-task view).
    pub fn task_view(&self, task: usize) -> Result<Dataset> {
        if task >= self.num_tasks {
            return Err(Error::Index {
                index: task,
                len: self.num_tasks,
            });
        }
        let mut out = self.clone();
        out.labels = self.task_labels(task);
        out.num_tasks = 1;
        Ok(out)
    }

    /// Gathers `rows` into an owned mini-batch.
    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let n = self.len();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        let cols = self.dense.cols();
        let mut dense = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            dense.extend_from_slice(self.dense.row(r));
        }
        let categorical = self
            .categorical
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        let mut labels = Vec::with_capacity(rows.len() * self.num_tasks);
        for &r in rows {
            labels.extend_from_slice(&self.labels[r * self.num_tasks..(r + 1) * self.num_tasks]);
        }
        Ok(Batch {
            dense: Matrix::from_vec(rows.len(), cols, dense)?,
            categorical,
            labels,
            num_tasks: self.num_tasks,
            sensitive: rows.iter().map(|&r| self.sensitive[r]).collect(),
        })
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            dense: self.dense.clone(),
            categorical: self.categorical.clone(),
            labels: self.labels.clone(),
            num_tasks: self.num_tasks,
            sensitive: self.sensitive.clone(),
        }
    }
}

/// An owned mini-batch of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    dense: Matrix,
    categorical: Vec<Vec<usize>>,
    labels: Vec<u8>,
    num_tasks: usize,
    sensitive: Vec<Option<u8>>,
}

impl Batch {
    /// Hand-built batch; `labels` holds one row of `num_tasks` entries per example.
    pub fn new(
        dense: Matrix,
        categorical: Vec<Vec<usize>>,
        labels: Vec<Vec<u8>>,
        sensitive: Vec<Option<u8>>,
    ) -> Result<Self> {
        let n = sensitive.len();
        if n == 0 {
            return Err(Error::Contract("a batch must not be empty".into()));
        }
        let num_tasks = labels.first().map_or(0, Vec::len);
        if num_tasks == 0 || labels.len() != n || labels.iter().any(|r| r.len() != num_tasks) {
            return Err(Error::shape("labels must be n rows of T entries"));
        }
        if dense.rows() != n || categorical.iter().any(|c| c.len() != n) {
            return Err(Error::shape("feature rows do not match the sensitive column"));
        }
        if labels.iter().flatten().any(|&y| y > 1) || sensitive.iter().flatten().any(|&a| a > 1) {
            return Err(Error::Contract("labels and sensitive values must be 0 or 1".into()));
        }
        Ok(Batch {
            dense,
            categorical,
            labels: labels.concat(),
            num_tasks,
            sensitive,
        })
    }

    pub fn len(&self) -> usize {
        self.sensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensitive.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn dense(&self) -> &Matrix {
        &self.dense
    }

    pub fn categorical(&self) -> &[Vec<usize>] {
        &self.categorical
    }

    pub fn label(&self, row: usize, task: usize) -> u8 {
        self.labels[row * self.num_tasks + task]
    }

    pub fn task_labels(&self, task: usize) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i, task)).collect()
    }

    pub fn sensitive(&self) -> &[Option<u8>] {
        &self.sensitive
    }
}
