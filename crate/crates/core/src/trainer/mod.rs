//! Vanilla scalarized training, per-task fairness remediation, and the
//! multi-task-aware update that routes head and shared fairness gradients
//! separately. All three use Adagrad.

mod adagrad;

pub use adagrad::{adagrad_update, ADAGRAD_EPS};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, decompose_fairness, task_fairness, FairnessLoss, FairnessLossKind, FairnessTarget};
use crate::model::{build_model, ArchConfig, MtlModel};
use crate::tensor::{GradMap, Matrix, ParamGroup, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Baseline,
    Mtaf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vanilla, Method::Baseline, Method::Mtaf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Baseline => "baseline",
            Method::Mtaf => "mtaf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub task_weights: Vec<f64>,
    pub fairness_weights: Vec<f64>,
    pub head_to_shared_ratios: Vec<f64>,
    pub fairness: FairnessLoss,
    #[serde(default)]
    pub target: FairnessTarget,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Vanilla training with equal task weights.
    pub fn vanilla(num_tasks: usize, learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            method: Method::Vanilla,
            task_weights: vec![1.0 / num_tasks as f64; num_tasks],
            fairness_weights: vec![0.0; num_tasks],
            head_to_shared_ratios: vec![1.0; num_tasks],
            fairness: FairnessLoss::new(FairnessLossKind::Mmd),
            target: FairnessTarget::default(),
            learning_rate,
            epochs,
            batch_size,
            seed,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.task_weights.len()
    }

    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        let lens = [
            self.task_weights.len(),
            self.fairness_weights.len(),
            self.head_to_shared_ratios.len(),
        ];
        if lens.iter().any(|&l| l != num_tasks) {
            return Err(Error::Config(format!(
                "weights, fairness weights and ratios need {num_tasks} entries, got {lens:?}"
            )));
        }
        let nonneg = |v: &f64| v.is_finite() && *v >= 0.0;
        if !self.task_weights.iter().all(nonneg) || !self.fairness_weights.iter().all(nonneg) {
            return Err(Error::Config(
                "task and fairness weights must be finite and >= 0".into(),
            ));
        }
        if !self.head_to_shared_ratios.iter().all(|&r| r.is_finite() && r > 0.0) {
            return Err(Error::Config("head-to-shared ratios must be > 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        self.fairness.validate()
    }

    /// Fairness weights actually in effect (all zero for vanilla).
    pub fn effective_fairness_weights(&self) -> Vec<f64> {
        match self.method {
            Method::Vanilla => vec![0.0; self.fairness_weights.len()],
            _ => self.fairness_weights.clone(),
        }
    }
}

/// Per-task loss values observed in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub task_losses: Vec<f64>,
}

fn check_finite(tape: &Tape<'_>, v: Var, term: impl FnOnce() -> String) -> Result<f64> {
    let x = tape.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { term: term() })
    }
}

/// Builds the objective(s) of one step and returns the gradient each parameter receives.
pub fn step_gradients(model: &MtlModel, batch: &Batch, config: &TrainConfig) -> Result<(GradMap, StepReport)> {
    let t_count = model.num_tasks();
    if batch.num_tasks() != t_count {
        return Err(Error::shape(format!(
            "batch has {} tasks, model has {t_count}",
            batch.num_tasks()
        )));
    }
    let mut tape = Tape::new(model.params());
    let outputs = model.forward(&mut tape, batch)?;
    let mut task_losses = Vec::with_capacity(t_count);
    let mut ce = Vec::with_capacity(t_count);
    for (t, out) in outputs.iter().enumerate() {
        let l = cross_entropy(&mut tape, out.prob, &batch.task_labels(t))?;
        task_losses.push(check_finite(&tape, l, || format!("cross-entropy of task {}", t + 1))?);
        ce.push(l);
    }
    let lambdas = config.effective_fairness_weights();
    let w = &config.task_weights;
    let grads = match config.method {
        Method::Vanilla => {
            let terms: Vec<(f64, Var)> = w.iter().copied().zip(ce.iter().copied()).collect();
            let root = tape.weighted_sum(&terms)?;
            tape.backward_params(root, |_| true)?
        }
        Method::Baseline => {
            let mut terms = Vec::with_capacity(t_count);
            for t in 0..t_count {
                let mut term = ce[t];
                if lambdas[t] != 0.0 {
                    let f = task_fairness(&mut tape, &config.fairness, config.target, t, batch, outputs[t].prob)?;
                    check_finite(&tape, f, || format!("fairness loss of task {}", t + 1))?;
                    let scaled = tape.scale(f, lambdas[t]);
                    term = tape.add(term, scaled)?;
                }
                terms.push((w[t], term));
            }
            let root = tape.weighted_sum(&terms)?;
            tape.backward_params(root, |_| true)?
        }
        Method::Mtaf => {
            let mut head_terms = Vec::with_capacity(t_count);
            let mut shared_terms = Vec::with_capacity(t_count);
            for t in 0..t_count {
                let (mut head, mut shared) = (ce[t], ce[t]);
                if lambdas[t] != 0.0 {
                    let (fh, fs) =
                        decompose_fairness(&mut tape, &config.fairness, config.target, t, batch, outputs[t].prob)?;
                    check_finite(&tape, fh, || format!("head fairness loss of task {}", t + 1))?;
                    check_finite(&tape, fs, || format!("shared fairness loss of task {}", t + 1))?;
                    if !tape.is_constant(fh) {
                        let s = tape.scale(fh, lambdas[t] * config.head_to_shared_ratios[t]);
                        head = tape.add(head, s)?;
                    }
                    if !tape.is_constant(fs) {
                        let s = tape.scale(fs, lambdas[t]);
                        shared = tape.add(shared, s)?;
                    }
                }
                head_terms.push((w[t], head));
                shared_terms.push((w[t], shared));
            }
            let head_root = tape.weighted_sum(&head_terms)?;
            let shared_root = tape.weighted_sum(&shared_terms)?;
            // Head parameters only see the head objective; shared parameters only
            // see the shared one, even though it also flows through the heads.
            let mut grads = tape.backward_params(head_root, ParamGroup::is_head)?;
            grads.add_assign(&tape.backward_params(shared_root, ParamGroup::is_shared)?);
            grads
        }
    };
    Ok((grads, StepReport { task_losses }))
}

/// One optimizer step on `batch`.
pub fn train_step(model: &mut MtlModel, batch: &Batch, config: &TrainConfig) -> Result<StepReport> {
    let (grads, report) = step_gradients(model, batch, config)?;
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate(&grads);
    for (_, p) in params.iter_mut() {
        let g = std::mem::replace(&mut p.grad, Matrix::zeros(0, 0));
        let res = adagrad_update(p, &g, config.learning_rate);
        p.grad = g;
        res?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: MtlModel,
    /// `history[epoch][task]`: mean training cross-entropy over the epoch's batches.
    pub history: Vec<Vec<f64>>,
    pub config: TrainConfig,
    pub seconds: f64,
}

/// Trains a fresh model on `dataset` for `config.epochs` seeded epochs.
pub fn train(dataset: &Dataset, arch: &ArchConfig, config: &TrainConfig) -> Result<TrainedRun> {
    if arch.num_tasks != dataset.num_tasks() {
        return Err(Error::Config(format!(
            "architecture has {} tasks, dataset has {}",
            arch.num_tasks,
            dataset.num_tasks()
        )));
    }
    config.validate(arch.num_tasks)?;
    let start = Instant::now();
    let mut model = build_model(arch, dataset.layout(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let plan = BatchPlan::new(dataset.len(), config.batch_size)?;
    let single = plan.num_batches() == 1;
    let full = single.then(|| dataset.full_batch());
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut sums = vec![0.0; arch.num_tasks];
        let batches = plan.epoch(&mut rng);
        for rows in &batches {
            let report = match &full {
                Some(b) => train_step(&mut model, b, config)?,
                None => train_step(&mut model, &dataset.batch(rows)?, config)?,
            };
            for (s, l) in sums.iter_mut().zip(&report.task_losses) {
                *s += l;
            }
        }
        history.push(sums.iter().map(|s| s / batches.len() as f64).collect());
    }
    Ok(TrainedRun {
        model,
        history,
        config: config.clone(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
