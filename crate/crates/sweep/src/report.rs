//! Frontier reports and plot data from a runs table.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use mtfair_core::pareto::{frontier, frontier_quality, shared_reference, ParetoPoint};
use mtfair_core::trainer::Method;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweepError};
use crate::runs::RunRow;

/// Margin added to the componentwise maximum to form the reference point.
pub const REFERENCE_MARGIN: f64 = 0.1;

/// A pair of minimized objectives read from each row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axes {
    /// x = ARE, y = ARFG.
    AreArfg,
    /// x = error, y = FPR gap of one task (0-based).
    TaskErrFpr(usize),
    /// Error of task 1 against error of task 2.
    Accuracy,
    /// FPR gap of task 1 against FPR gap of task 2.
    Fairness,
}

impl Axes {
    pub fn name(&self) -> String {
        match self {
            Axes::AreArfg => "are_arfg".into(),
            Axes::TaskErrFpr(t) => format!("err_fpr_task{}", t + 1),
            Axes::Accuracy => "accuracy".into(),
            Axes::Fairness => "fairness".into(),
        }
    }

    pub fn labels(&self) -> [String; 2] {
        match self {
            Axes::AreArfg => ["are".into(), "arfg".into()],
            Axes::TaskErrFpr(t) => [format!("err_{}", t + 1), format!("fpr_gap_{}", t + 1)],
            Axes::Accuracy => ["err_1".into(), "err_2".into()],
            Axes::Fairness => ["fpr_gap_1".into(), "fpr_gap_2".into()],
        }
    }

    /// Every axes pair that makes sense for `num_tasks` tasks.
    pub fn all(num_tasks: usize) -> Vec<Axes> {
        let mut v = vec![Axes::AreArfg];
        v.extend((0..num_tasks).map(Axes::TaskErrFpr));
        if num_tasks == 2 {
            v.extend([Axes::Accuracy, Axes::Fairness]);
        }
        v
    }

    fn extract(&self, row: &RunRow) -> Option<[f64; 2]> {
        let task = |t: usize| row.tasks.get(t);
        let xy = match self {
            Axes::AreArfg => [row.are?, row.arfg?],
            Axes::TaskErrFpr(t) => [task(*t)?.err?, task(*t)?.fpr_gap?],
            Axes::Accuracy => [task(0)?.err?, task(1)?.err?],
            Axes::Fairness => [task(0)?.fpr_gap?, task(1)?.fpr_gap?],
        };
        xy.iter().all(|v| v.is_finite()).then_some(xy)
    }
}

impl std::str::FromStr for Axes {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "are_arfg" => Ok(Axes::AreArfg),
            "accuracy" => Ok(Axes::Accuracy),
            "fairness" => Ok(Axes::Fairness),
            _ => s
                .strip_prefix("err_fpr_task")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| Axes::TaskErrFpr(n - 1))
                .ok_or_else(|| SweepError::Config(format!("unknown axes {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub runs: usize,
    pub included: usize,
    /// Rows of runs that did not finish.
    pub excluded_failed: usize,
    /// Rows where one of the two metrics is missing.
    pub excluded_undefined: usize,
    pub frontier: Vec<ParetoPoint>,
    pub frontier_quality: f64,
    /// Frontier point whose x is closest to the middle of the method's x range.
    pub mid_frontier: Option<ParetoPoint>,
    /// Runs on the method's per-task error frontier, placed in these axes.
    pub accuracy_optimal: Vec<ParetoPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxesReport {
    pub axes: String,
    pub x: String,
    pub y: String,
    pub reference: [f64; 2],
    pub reference_margin: f64,
    pub methods: Vec<MethodReport>,
    /// Methods from highest to lowest frontier quality.
    pub quality_order: Vec<Method>,
}

impl AxesReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

fn payload(row: &RunRow) -> serde_json::Value {
    serde_json::json!({
        "method": row.method,
        "seed": row.seed,
        "w": row.task_weights,
        "lambda": row.fairness_weights,
        "r": row.head_to_shared_ratios,
        "err": row.tasks.iter().map(|c| c.err).collect::<Vec<_>>(),
        "fpr_gap": row.tasks.iter().map(|c| c.fpr_gap).collect::<Vec<_>>(),
        "are": row.are,
        "arfg": row.arfg,
    })
}

fn is_failed(row: &RunRow) -> bool {
    row.flags.iter().any(|f| f.starts_with("failed"))
}

/// Run ids on the per-task error frontier of `rows`.
fn accuracy_frontier_ids(rows: &[&RunRow]) -> Result<HashSet<String>> {
    let points: Vec<ParetoPoint> = rows
        .iter()
        .filter(|r| !is_failed(r))
        .filter_map(|r| {
            let errs: Option<Vec<f64>> = r.tasks.iter().map(|c| c.err).collect();
            errs.map(|e| ParetoPoint::new(e, r.run_id.clone()))
        })
        .collect();
    if points.is_empty() {
        return Ok(HashSet::new());
    }
    Ok(frontier(&points)?.into_iter().map(|p| p.run_id).collect())
}

/// Plot rows: method, x, y, on_frontier, accuracy_optimal, run_id.
type PlotRow = (Method, f64, f64, bool, bool, String);

fn analyse(rows: &[RunRow], axes: Axes) -> Result<(AxesReport, Vec<PlotRow>)> {
    let mut by_method: BTreeMap<Method, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method).or_default().push(r);
    }
    for group in by_method.values_mut() {
        group.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    }
    let mut points: BTreeMap<Method, Vec<ParetoPoint>> = BTreeMap::new();
    let mut counts: BTreeMap<Method, (usize, usize)> = BTreeMap::new();
    for (&m, group) in &by_method {
        let (mut failed, mut undefined) = (0, 0);
        let mut pts = Vec::new();
        for r in group {
            if is_failed(r) {
                failed += 1;
                continue;
            }
            match axes.extract(r) {
                Some(xy) => pts.push(ParetoPoint {
                    objectives: xy.to_vec(),
                    run_id: r.run_id.clone(),
                    payload: payload(r),
                }),
                None => undefined += 1,
            }
        }
        if pts.is_empty() {
            log::warn!("method {m} has no usable rows on {} axes", axes.name());
        }
        if failed + undefined > 0 {
            log::info!(
                "{}: {m} excludes {failed} failed and {undefined} undefined rows",
                axes.name()
            );
        }
        points.insert(m, pts);
        counts.insert(m, (failed, undefined));
    }
    let reference = shared_reference(points.values().flatten(), REFERENCE_MARGIN)
        .ok_or_else(|| SweepError::Config(format!("no run has defined {} metrics", axes.name())))?;
    let reference = [reference[0], reference[1]];
    let mut methods = Vec::new();
    let mut plot = Vec::new();
    for (&m, pts) in &points {
        let group = &by_method[&m];
        let acc_ids = accuracy_frontier_ids(group)?;
        let front = if pts.is_empty() { Vec::new() } else { frontier(pts)? };
        let quality = frontier_quality(pts, reference)?;
        let on_front: HashSet<&str> = front.iter().map(|p| p.run_id.as_str()).collect();
        let mid_frontier = (!front.is_empty()).then(|| {
            let lo = pts.iter().map(|p| p.objectives[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p.objectives[0]).fold(f64::NEG_INFINITY, f64::max);
            let mid = 0.5 * (lo + hi);
            front
                .iter()
                .min_by(|a, b| (a.objectives[0] - mid).abs().total_cmp(&(b.objectives[0] - mid).abs()))
                .cloned()
                .expect("frontier is non-empty")
        });
        for p in pts {
            plot.push((
                m,
                p.objectives[0],
                p.objectives[1],
                on_front.contains(p.run_id.as_str()),
                acc_ids.contains(&p.run_id),
                p.run_id.clone(),
            ));
        }
        let (failed, undefined) = counts[&m];
        methods.push(MethodReport {
            method: m,
            runs: group.len(),
            included: pts.len(),
            excluded_failed: failed,
            excluded_undefined: undefined,
            accuracy_optimal: pts.iter().filter(|p| acc_ids.contains(&p.run_id)).cloned().collect(),
            frontier: front,
            frontier_quality: quality,
            mid_frontier,
        });
    }
    let mut quality_order: Vec<&MethodReport> = methods.iter().collect();
    quality_order.sort_by(|a, b| b.frontier_quality.total_cmp(&a.frontier_quality));
    let quality_order = quality_order.into_iter().map(|r| r.method).collect();
    let [x, y] = axes.labels();
    Ok((
        AxesReport {
            axes: axes.name(),
            x,
            y,
            reference,
            reference_margin: REFERENCE_MARGIN,
            methods,
            quality_order,
        },
        plot,
    ))
}

/// Report for one axes pair; a pure function of `rows`.
pub fn build_report(rows: &[RunRow], axes: Axes) -> Result<AxesReport> {
    analyse(rows, axes).map(|(r, _)| r)
}

/// Writes `frontier_<axes>.json` and `plotdata_<axes>.csv` into `out` for every axes pair.
pub fn emit_reports(rows: &[RunRow], axes: &[Axes], out: &Path) -> Result<Vec<(AxesReport, PathBuf)>> {
    std::fs::create_dir_all(out).map_err(|e| SweepError::io(out, e))?;
    let mut written = Vec::new();
    for &a in axes {
        let (report, plot) = analyse(rows, a)?;
        let json_path = out.join(format!("frontier_{}.json", a.name()));
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&json_path, text).map_err(|e| SweepError::io(&json_path, e))?;
        let csv_path = out.join(format!("plotdata_{}.csv", a.name()));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["method", "x", "y", "on_frontier", "accuracy_optimal", "run_id"])?;
        for (m, x, y, on, acc, id) in plot {
            w.write_record([
                m.to_string(),
                format!("{x}"),
                format!("{y}"),
                on.to_string(),
                acc.to_string(),
                id,
            ])?;
        }
        w.flush().map_err(|e| SweepError::io(&csv_path, e))?;
        written.push((report, json_path));
    }
    Ok(written)
}
