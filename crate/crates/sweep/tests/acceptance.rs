//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=6,7` restricts the run to the listed criteria.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::Check;
use mtfair_core::metrics::evaluate_model;
use mtfair_core::trainer::{train, Method, TrainConfig};
use mtfair_sweep::baselines::{baseline_train_config, ensure_baselines};
use mtfair_sweep::{
    build_report, load_preset_data, read_runs, resolve_dataset, run_sweep, Axes, RunContext, RunsTable, SweepConfig,
};

const PAIRED_SEEDS: u64 = 20;
const PAIRED_WINS_NEEDED: usize = 15;
const SWEEP_MASTER_SEEDS: [u64; 3] = [1, 2, 3];
const SWEEP_RUNS_PER_METHOD: usize = 200;

fn gradients() -> Check {
    let graphs = common::check_random_graph_gradients(50)?;
    let model = common::check_model_gradients()?;
    Ok(format!("{graphs}; model: {model}"))
}

/// Vanilla two-task model against a single-task model for task 2, per seed.
fn mtl_raises_task2_gap() -> Check {
    let preset = resolve_dataset("uci_adult").map_err(|e| e.to_string())?;
    let data = load_preset_data(&preset).map_err(|e| e.to_string())?;
    let t = &preset.training;
    let stl_arch = preset.arch.single_task();
    let train2 = data.train.task_view(1).map_err(|e| e.to_string())?;
    let test2 = data.test.task_view(1).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let (mut mtl_sum, mut stl_sum) = (0.0, 0.0);
    for seed in 1..=PAIRED_SEEDS {
        let mut mtl_cfg = TrainConfig::vanilla(2, t.learning_rate, t.epochs, t.batch_size, seed);
        mtl_cfg.task_weights = vec![0.5, 0.5];
        let mtl = train(&data.train, &preset.arch, &mtl_cfg).map_err(|e| e.to_string())?;
        let mtl_gap = evaluate_model(&mtl.model, &data.test, &preset.thresholds).map_err(|e| e.to_string())?[1]
            .fpr_gap
            .ok_or("multi-task FPR gap undefined")?;
        let mut stl_cfg = baseline_train_config(&preset);
        stl_cfg.seed = seed;
        let stl = train(&train2, &stl_arch, &stl_cfg).map_err(|e| e.to_string())?;
        let stl_gap = evaluate_model(&stl.model, &test2, &preset.thresholds[1..2]).map_err(|e| e.to_string())?[0]
            .fpr_gap
            .ok_or("single-task FPR gap undefined")?;
        wins += usize::from(mtl_gap > stl_gap);
        mtl_sum += mtl_gap;
        stl_sum += stl_gap;
        println!("    seed {seed:2}: multi-task gap {mtl_gap:.4}, single-task gap {stl_gap:.4}");
    }
    let n = PAIRED_SEEDS as f64;
    let detail = format!(
        "{wins}/{PAIRED_SEEDS} seeds with a larger multi-task gap (means {:.4} vs {:.4})",
        mtl_sum / n,
        stl_sum / n
    );
    if wins >= PAIRED_WINS_NEEDED {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn treatment_ordering() -> Check {
    let preset = resolve_dataset("uci_adult").map_err(|e| e.to_string())?;
    let data = load_preset_data(&preset).map_err(|e| e.to_string())?;
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let baselines = ensure_baselines(&preset, &data, work.path()).map_err(|e| e.to_string())?;
    let ctx = RunContext {
        preset: &preset,
        data: &data,
        baselines: &baselines,
    };
    let sweep_file = Path::new(env!("CARGO_MANIFEST_DIR")).join("sweeps/adult_mmd.json");
    let base = SweepConfig::from_file(&sweep_file).map_err(|e| e.to_string())?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut good = 0;
    let mut notes = Vec::new();
    for master in SWEEP_MASTER_SEEDS {
        let mut sweep = base.clone();
        sweep.master_seed = master;
        sweep.budget = SWEEP_RUNS_PER_METHOD;
        let out = work.path().join(format!("master{master}"));
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let mut table = RunsTable::open(&out.join("runs.csv"), 2).map_err(|e| e.to_string())?;
        let started = Instant::now();
        run_sweep(&ctx, &sweep, &mut table, jobs).map_err(|e| e.to_string())?;
        let rows = read_runs(table.path()).map_err(|e| e.to_string())?;
        let report = build_report(&rows, Axes::AreArfg).map_err(|e| e.to_string())?;
        let quality = |m| report.method(m).map_or(f64::NAN, |r| r.frontier_quality);
        let mid_arfg = |m| {
            report
                .method(m)
                .and_then(|r| r.mid_frontier.as_ref())
                .map_or(f64::NAN, |p| p.objectives[1])
        };
        let (qm, qb, qv) = (
            quality(Method::Mtaf),
            quality(Method::Baseline),
            quality(Method::Vanilla),
        );
        let (am, ab) = (mid_arfg(Method::Mtaf), mid_arfg(Method::Baseline));
        let ordered = qm > qb && qb > qv;
        let fairer = am < ab;
        good += usize::from(ordered && fairer);
        println!(
            "    master seed {master}: quality mtaf {qm:.4} baseline {qb:.4} vanilla {qv:.4}; \
             mid-frontier ARFG mtaf {am:.4} baseline {ab:.4} vanilla {:.4} ({:.0} s)",
            mid_arfg(Method::Vanilla),
            started.elapsed().as_secs_f64()
        );
        notes.push(format!(
            "seed {master}: {}{}",
            if ordered { "ordered" } else { "not ordered" },
            if fairer { ", mtaf fairer" } else { ", mtaf not fairer" }
        ));
    }
    let detail = format!(
        "{good}/{} master seeds satisfied ({})",
        SWEEP_MASTER_SEEDS.len(),
        notes.join("; ")
    );
    if good >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        (1, "relative metrics on the two-model example", common::table_two),
        (2, "gradients match finite differences", gradients),
        (3, "fairness losses routed to their parameters", common::check_routing),
        (4, "head and shared parts sum to the full loss", || {
            common::check_decomposition(100, 21)
        }),
        (5, "frontier and staircase area match oracles", || {
            common::check_pareto(5)
        }),
        (
            6,
            "multi-task training raises the task-2 FPR gap on Adult",
            mtl_raises_task2_gap,
        ),
        (
            7,
            "mtaf frontier beats baseline beats vanilla on Adult",
            treatment_ordering,
        ),
        (8, "fairness loss values match closed forms", common::check_loss_oracles),
        (
            9,
            "synthetic data: no gap when symmetric, halved gap under mtaf",
            common::check_synthetic,
        ),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id}. {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id}. {name} [{secs:.1} s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
