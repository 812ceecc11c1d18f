//! Pareto dominance, frontier extraction, and 2-D dominated hypervolume.
//! All objectives are minimized.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub objectives: Vec<f64>,
    pub run_id: String,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl ParetoPoint {
    pub fn new(objectives: Vec<f64>, run_id: impl Into<String>) -> Self {
        ParetoPoint {
            objectives,
            run_id: run_id.into(),
            payload: serde_json::Value::Null,
        }
    }
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> Result<bool> {
    if a.objectives.len() != b.objectives.len() {
        return Err(Error::Contract(format!(
            "cannot compare {}-d and {}-d points",
            a.objectives.len(),
            b.objectives.len()
        )));
    }
    Ok(dominates_unchecked(&a.objectives, &b.objectives))
}

fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

fn lex_order(a: &ParetoPoint, b: &ParetoPoint) -> Ordering {
    a.objectives
        .iter()
        .zip(&b.objectives)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.run_id.cmp(&b.run_id))
}

fn check_points(points: &[ParetoPoint]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::Contract("frontier of an empty point set".into()));
    };
    let dim = first.objectives.len();
    for p in points {
        if p.objectives.len() != dim {
            return Err(Error::Contract(format!(
                "run {} has {} objectives, expected {dim}",
                p.run_id,
                p.objectives.len()
            )));
        }
        if p.objectives.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("run {} has a non-finite objective", p.run_id)));
        }
    }
    Ok(dim)
}

/// Points dominated by no other point, sorted lexicographically by objectives then run id.
/// Equal objective vectors do not dominate each other, so duplicates are all kept.
pub fn frontier(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>> {
    check_points(points)?;
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| lex_order(a, b));
    // A dominator always sorts before the point it dominates, and anything
    // dominated by a discarded point is also dominated by a kept one.
    let mut kept: Vec<&ParetoPoint> = Vec::new();
    for p in sorted {
        if !kept.iter().any(|k| dominates_unchecked(&k.objectives, &p.objectives)) {
            kept.push(p);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

/// Area dominated by the 2-D frontier of `points` and bounded by `reference`.
/// An empty point set has quality 0.
pub fn frontier_quality(points: &[ParetoPoint], reference: [f64; 2]) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    if check_points(points)? != 2 {
        return Err(Error::Contract("frontier quality needs 2-d objectives".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.objectives[0] > reference[0] || p.objectives[1] > reference[1])
    {
        return Err(Error::Contract(format!(
            "run {} at {:?} lies beyond the reference point {reference:?}",
            p.run_id, p.objectives
        )));
    }
    let front = frontier(points)?;
    let mut area = 0.0;
    for (i, p) in front.iter().enumerate() {
        let next_x = front.get(i + 1).map_or(reference[0], |q| q.objectives[0]);
        area += (next_x - p.objectives[0]) * (reference[1] - p.objectives[1]);
    }
    Ok(area)
}

/// Componentwise maximum over all points, scaled by `1 + margin`.
pub fn shared_reference<'a>(points: impl IntoIterator<Item = &'a ParetoPoint>, margin: f64) -> Option<Vec<f64>> {
    let mut max: Option<Vec<f64>> = None;
    for p in points {
        match &mut max {
            None => max = Some(p.objectives.clone()),
            Some(m) => {
                for (a, &b) in m.iter_mut().zip(&p.objectives) {
                    *a = a.max(b);
                }
            }
        }
    }
    max.map(|m| m.into_iter().map(|v| v * (1.0 + margin)).collect())
}
