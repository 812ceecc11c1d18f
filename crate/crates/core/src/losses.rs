//! Cross-entropy, the empirical group-fairness losses, and the split of a
//! task's fairness loss into a head part and a shared part.

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessLossKind {
    /// Absolute Pearson correlation between probability and group.
    Correlation,
    /// Biased squared MMD with a Gaussian kernel.
    Mmd,
    /// Absolute difference of the groups' mean probabilities.
    SoftFprGap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessLoss {
    pub kind: FairnessLossKind,
    #[serde(default = "default_bandwidth")]
    pub mmd_bandwidth: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl FairnessLoss {
    pub fn new(kind: FairnessLossKind) -> Self {
        FairnessLoss {
            kind,
            mmd_bandwidth: default_bandwidth(),
        }
    }

    pub fn mmd(bandwidth: f64) -> Self {
        FairnessLoss {
            kind: FairnessLossKind::Mmd,
            mmd_bandwidth: bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mmd_bandwidth > 0.0 && self.mmd_bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "mmd bandwidth must be positive, got {}",
                self.mmd_bandwidth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessTarget {
    /// False positive rate parity, computed on negatives.
    #[default]
    EqualOpportunityFpr,
    /// True positive rate parity, computed on positives.
    EqualOpportunityTpr,
    EqualizedOdds,
}

impl FairnessTarget {
    fn sides(self) -> &'static [u8] {
        match self {
            FairnessTarget::EqualOpportunityFpr => &[0],
            FairnessTarget::EqualOpportunityTpr => &[1],
            FairnessTarget::EqualizedOdds => &[0, 1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsetKind {
    Negatives,
    Positives,
    /// Negative for this task and positive for every other task.
    ExclusiveNegatives,
    /// Positive for this task and negative for every other task.
    ExclusivePositives,
}

/// Sorted row indices of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExampleSubset {
    pub task: usize,
    pub kind: SubsetKind,
    pub rows: Vec<usize>,
}

/// Rows of `batch` in the requested label subset of task `t`.
///
/// With a single task the intersection over other tasks is empty and the
/// exclusive sets equal the plain ones.
pub fn subset_select(batch: &Batch, t: usize, which: SubsetKind) -> Result<ExampleSubset> {
    let tasks = batch.num_tasks();
    if t >= tasks {
        return Err(Error::Index { index: t, len: tasks });
    }
    let (own, exclusive) = match which {
        SubsetKind::Negatives => (0, false),
        SubsetKind::Positives => (1, false),
        SubsetKind::ExclusiveNegatives => (0, true),
        SubsetKind::ExclusivePositives => (1, true),
    };
    let rows = (0..batch.len())
        .filter(|&i| batch.label(i, t) == own && (!exclusive || (0..tasks).all(|k| k == t || batch.label(i, k) != own)))
        .collect();
    Ok(ExampleSubset {
        task: t,
        kind: which,
        rows,
    })
}

/// Mean binary cross-entropy of `prob` (`n x 1`) against `labels`.
pub fn cross_entropy(tape: &mut Tape<'_>, prob: Var, labels: &[u8]) -> Result<Var> {
    let (n, c) = tape.shape(prob);
    if c != 1 || n != labels.len() {
        return Err(Error::shape(format!(
            "cross-entropy of {:?} probabilities against {} labels",
            (n, c),
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = tape.constant(Matrix::column(&y));
    let not_y = tape.constant(Matrix::column(&not_y));
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let p = tape.clamp(prob, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let q = tape.sub(ones, p)?;
    let lp = tape.ln(p);
    let lq = tape.ln(q);
    let a = tape.mul(y, lp)?;
    let b = tape.mul(not_y, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean_all(s)?;
    Ok(tape.scale(m, -1.0))
}

/// Fairness loss of `prob` over `subset`, using only rows with a known group.
///
/// An empty group, or for correlation fewer than two rows or zero variance,
/// gives a constant zero.
pub fn fairness_loss(
    tape: &mut Tape<'_>,
    loss: &FairnessLoss,
    prob: Var,
    sensitive: &[Option<u8>],
    subset: &ExampleSubset,
) -> Result<Var> {
    loss.validate()?;
    let (n, c) = tape.shape(prob);
    if c != 1 || n != sensitive.len() {
        return Err(Error::shape(format!(
            "fairness loss of {:?} probabilities with {} sensitive values",
            (n, c),
            sensitive.len()
        )));
    }
    if let Some(&bad) = subset.rows.iter().find(|&&r| r >= n) {
        return Err(Error::Index { index: bad, len: n });
    }
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut rows = Vec::new();
    for &r in &subset.rows {
        if let Some(a) = sensitive[r] {
            groups[usize::from(a)].push(r);
            rows.push(r);
        }
    }
    if groups.iter().any(Vec::is_empty) {
        return Ok(tape.scalar(0.0));
    }
    match loss.kind {
        FairnessLossKind::SoftFprGap => {
            let p0 = tape.gather_rows(prob, &groups[0])?;
            let p1 = tape.gather_rows(prob, &groups[1])?;
            let m0 = tape.mean_all(p0)?;
            let m1 = tape.mean_all(p1)?;
            let d = tape.sub(m0, m1)?;
            Ok(tape.abs(d))
        }
        FairnessLossKind::Mmd => {
            let x = tape.gather_rows(prob, &groups[0])?;
            let y = tape.gather_rows(prob, &groups[1])?;
            let gamma = -1.0 / (2.0 * loss.mmd_bandwidth * loss.mmd_bandwidth);
            let kxx = tape.kernel_mean(x, x, gamma)?;
            let kyy = tape.kernel_mean(y, y, gamma)?;
            let kxy = tape.kernel_mean(x, y, gamma)?;
            let within = tape.add(kxx, kyy)?;
            let cross = tape.scale(kxy, 2.0);
            tape.sub(within, cross)
        }
        FairnessLossKind::Correlation => {
            let m = rows.len();
            if m < 2 {
                return Ok(tape.scalar(0.0));
            }
            let s: Vec<f64> = rows.iter().map(|&r| f64::from(sensitive[r].unwrap_or(0))).collect();
            let s_mean = s.iter().sum::<f64>() / m as f64;
            let sc: Vec<f64> = s.iter().map(|v| v - s_mean).collect();
            let s_var = sc.iter().map(|v| v * v).sum::<f64>() / m as f64;
            let p = tape.gather_rows(prob, &rows)?;
            let p_mean = tape.mean_rows(p)?;
            let p_mean = tape.broadcast_rows(p_mean, m)?;
            let pc = tape.sub(p, p_mean)?;
            let sq = tape.mul(pc, pc)?;
            let p_var = tape.mean_all(sq)?;
            if tape.value(p_var).item() <= 0.0 || s_var <= 0.0 {
                return Ok(tape.scalar(0.0));
            }
            let sc = tape.constant(Matrix::column(&sc));
            let prod = tape.mul(pc, sc)?;
            let cov = tape.mean_all(prod)?;
            let inv_sd = tape.pow(p_var, -0.5);
            let r = tape.mul(cov, inv_sd)?;
            let r = tape.scale(r, 1.0 / s_var.sqrt());
            Ok(tape.abs(r))
        }
    }
}

fn side_subsets(batch: &Batch, t: usize, side: u8) -> Result<(ExampleSubset, ExampleSubset)> {
    let (all, excl) = if side == 0 {
        (SubsetKind::Negatives, SubsetKind::ExclusiveNegatives)
    } else {
        (SubsetKind::Positives, SubsetKind::ExclusivePositives)
    };
    Ok((subset_select(batch, t, all)?, subset_select(batch, t, excl)?))
}

/// The fairness loss of task `t` over all its negatives (and/or positives).
pub fn task_fairness(
    tape: &mut Tape<'_>,
    loss: &FairnessLoss,
    target: FairnessTarget,
    t: usize,
    batch: &Batch,
    prob: Var,
) -> Result<Var> {
    let mut terms = Vec::new();
    for &side in target.sides() {
        let (all, _) = side_subsets(batch, t, side)?;
        terms.push((1.0, fairness_loss(tape, loss, prob, batch.sensitive(), &all)?));
    }
    tape.weighted_sum(&terms)
}

/// `(F_head, F_shared)` for task `t`: the head part is the loss on the
/// exclusive subsets, the shared part is the full loss minus the head part.
pub fn decompose_fairness(
    tape: &mut Tape<'_>,
    loss: &FairnessLoss,
    target: FairnessTarget,
    t: usize,
    batch: &Batch,
    prob: Var,
) -> Result<(Var, Var)> {
    let sensitive = batch.sensitive();
    let known =
        |s: &ExampleSubset| -> Vec<usize> { s.rows.iter().copied().filter(|&r| sensitive[r].is_some()).collect() };
    let mut head_terms = Vec::new();
    let mut full_terms = Vec::new();
    let mut same_rows = true;
    for &side in target.sides() {
        let (all, excl) = side_subsets(batch, t, side)?;
        same_rows &= known(&all) == known(&excl);
        head_terms.push((1.0, fairness_loss(tape, loss, prob, sensitive, &excl)?));
        full_terms.push((1.0, fairness_loss(tape, loss, prob, sensitive, &all)?));
    }
    let head = tape.weighted_sum(&head_terms)?;
    if same_rows {
        // Exclusive and full subsets coincide (always the case for T = 1).
        return Ok((head, tape.scalar(0.0)));
    }
    let full = tape.weighted_sum(&full_terms)?;
    if tape.is_constant(head) && tape.value(head).item() == 0.0 {
        return Ok((head, full));
    }
    let shared = tape.sub(full, head)?;
    Ok((head, shared))
}
