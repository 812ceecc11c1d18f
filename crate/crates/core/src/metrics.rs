//! Error rate, FPR/TPR gaps, naive averages and the baseline-relative
//! ARFG/ARE aggregates, plus the single-task baseline runner.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, MtlModel};
use crate::trainer::{train, Method, TrainConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const DENOMINATOR_GUARD: f64 = 1e-9;

/// Per-group example counts behind a [`TaskEval`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub negatives: [usize; 2],
    pub positives: [usize; 2],
    pub false_positives: [usize; 2],
    pub true_positives: [usize; 2],
}

/// Hard-decision metrics of one task. A gap is `None` when some group has no
/// negatives (FPR) or no positives (TPR) among rows with a known group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub err: f64,
    pub fpr_gap: Option<f64>,
    pub tpr_gap: Option<f64>,
    pub counts: GroupCounts,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn gap(num: [usize; 2], den: [usize; 2]) -> Option<f64> {
    Some((rate(num[0], den[0])? - rate(num[1], den[1])?).abs())
}

/// Thresholds `probabilities` (`p >= threshold` predicts 1) and scores them.
pub fn evaluate_task(
    probabilities: &[f64],
    labels: &[u8],
    sensitive: &[Option<u8>],
    threshold: f64,
) -> Result<TaskEval> {
    let n = probabilities.len();
    if n == 0 {
        return Err(Error::Contract("cannot evaluate an empty prediction set".into()));
    }
    if labels.len() != n || sensitive.len() != n {
        return Err(Error::shape(format!(
            "{n} predictions, {} labels, {} sensitive values",
            labels.len(),
            sensitive.len()
        )));
    }
    let mut wrong = 0;
    let mut c = GroupCounts::default();
    for ((&p, &y), &a) in probabilities.iter().zip(labels).zip(sensitive) {
        let pred = u8::from(p >= threshold);
        wrong += usize::from(pred != y);
        let Some(a) = a else { continue };
        let g = usize::from(a);
        if y == 0 {
            c.negatives[g] += 1;
            c.false_positives[g] += usize::from(pred);
        } else {
            c.positives[g] += 1;
            c.true_positives[g] += usize::from(pred);
        }
    }
    Ok(TaskEval {
        err: wrong as f64 / n as f64,
        fpr_gap: gap(c.false_positives, c.negatives),
        tpr_gap: gap(c.true_positives, c.positives),
        counts: c,
    })
}

/// Evaluates every task of `model` on `data`, task `t` at `thresholds[t]`.
pub fn evaluate_model(model: &MtlModel, data: &Dataset, thresholds: &[f64]) -> Result<Vec<TaskEval>> {
    if thresholds.len() != model.num_tasks() {
        return Err(Error::Config(format!(
            "{} thresholds for {} tasks",
            thresholds.len(),
            model.num_tasks()
        )));
    }
    let probs = model.predict(&data.full_batch())?;
    probs
        .iter()
        .zip(thresholds)
        .enumerate()
        .map(|(t, (p, &th))| evaluate_task(p, &data.task_labels(t), data.sensitive(), th))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineProvenance {
    pub seeds: Vec<u64>,
    pub arch: ArchConfig,
    pub train_config: TrainConfig,
    /// Filled by callers that cache baselines.
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// Single-task reference metrics, one entry per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StlBaselines {
    pub err: Vec<f64>,
    pub fpr_gap: Vec<f64>,
    pub tpr_gap: Vec<Option<f64>>,
    pub provenance: Option<BaselineProvenance>,
}

impl StlBaselines {
    pub fn new(err: Vec<f64>, fpr_gap: Vec<f64>) -> Self {
        let t = err.len();
        StlBaselines {
            err,
            fpr_gap,
            tpr_gap: vec![None; t],
            provenance: None,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.err.len()
    }
}

/// Aggregates of one multi-task model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tasks: Vec<TaskEval>,
    pub err_mean: f64,
    pub fpr_gap_mean: Option<f64>,
    /// Mean over tasks of FPR gap relative to its single-task baseline.
    pub arfg: Option<f64>,
    /// Mean over tasks of error relative to its single-task baseline.
    pub are: f64,
    pub flags: Vec<String>,
}

impl RunMetrics {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Naive averages and ARFG/ARE against `baselines`.
pub fn aggregate(per_task: &[TaskEval], baselines: &StlBaselines) -> Result<RunMetrics> {
    let t = per_task.len();
    if t == 0 || baselines.num_tasks() != t || baselines.fpr_gap.len() != t {
        return Err(Error::Contract(format!(
            "{t} task evaluations against {} baselines",
            baselines.num_tasks()
        )));
    }
    for task in 0..t {
        for (what, v) in [("error", baselines.err[task]), ("FPR gap", baselines.fpr_gap[task])] {
            if v.is_nan() || v <= DENOMINATOR_GUARD {
                return Err(Error::UndefinedMetric {
                    task: task + 1,
                    reason: format!("single-task {what} {v} is not above {DENOMINATOR_GUARD}"),
                });
            }
        }
    }
    let tf = t as f64;
    let err_mean = per_task.iter().map(|e| e.err).sum::<f64>() / tf;
    let are = per_task.iter().zip(&baselines.err).map(|(e, b)| e.err / b).sum::<f64>() / tf;
    let mut flags = Vec::new();
    for (i, e) in per_task.iter().enumerate() {
        if e.fpr_gap.is_none() {
            flags.push(format!("fpr_gap_undefined_task{}", i + 1));
        }
    }
    let gaps: Option<Vec<f64>> = per_task.iter().map(|e| e.fpr_gap).collect();
    let (fpr_gap_mean, arfg) = match gaps {
        Some(g) => (
            Some(g.iter().sum::<f64>() / tf),
            Some(g.iter().zip(&baselines.fpr_gap).map(|(x, b)| x / b).sum::<f64>() / tf),
        ),
        None => (None, None),
    };
    Ok(RunMetrics {
        tasks: per_task.to_vec(),
        err_mean,
        fpr_gap_mean,
        arfg,
        are,
        flags,
    })
}

/// Trains one vanilla single-task model per task and seed on `train_data`,
/// evaluates on `test_data`, and averages over seeds.
///
/// `train_config` supplies optimizer settings; method, weights and seed are overridden.
pub fn run_stl_baselines(
    train_data: &Dataset,
    test_data: &Dataset,
    arch: &ArchConfig,
    train_config: &TrainConfig,
    seeds: &[u64],
    thresholds: &[f64],
) -> Result<StlBaselines> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required for baselines".into()));
    }
    let t_count = train_data.num_tasks();
    if thresholds.len() != t_count {
        return Err(Error::Config(format!(
            "{} thresholds for {t_count} tasks",
            thresholds.len()
        )));
    }
    let stl_arch = arch.single_task();
    let mut cfg = train_config.clone();
    cfg.method = Method::Vanilla;
    cfg.task_weights = vec![1.0];
    cfg.fairness_weights = vec![0.0];
    cfg.head_to_shared_ratios = vec![1.0];
    let mut out = StlBaselines::new(Vec::new(), Vec::new());
    for t in 0..t_count {
        let train_t = train_data.task_view(t)?;
        let test_t = test_data.task_view(t)?;
        let mut errs = Vec::new();
        let mut fprs = Vec::new();
        let mut tprs = Vec::new();
        for &seed in seeds {
            cfg.seed = seed;
            let run = train(&train_t, &stl_arch, &cfg)?;
            let eval = evaluate_model(&run.model, &test_t, &thresholds[t..=t])?.remove(0);
            log::debug!(
                "stl task {} seed {seed}: err {:.4} fpr gap {:?}",
                t + 1,
                eval.err,
                eval.fpr_gap
            );
            errs.push(eval.err);
            fprs.extend(eval.fpr_gap);
            tprs.extend(eval.tpr_gap);
        }
        if fprs.is_empty() {
            return Err(Error::UndefinedMetric {
                task: t + 1,
                reason: "single-task FPR gap undefined for every seed".into(),
            });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.err.push(mean(&errs));
        out.fpr_gap.push(mean(&fprs));
        out.tpr_gap.push((!tprs.is_empty()).then(|| mean(&tprs)));
    }
    out.provenance = Some(BaselineProvenance {
        seeds: seeds.to_vec(),
        arch: arch.clone(),
        train_config: cfg,
        config_hash: None,
    });
    Ok(out)
}
