//! Single runs and random-search sweeps.

use std::sync::Mutex;
use std::time::Instant;

use mtfair_core::data::LoadedData;
use mtfair_core::metrics::{aggregate, evaluate_model, StlBaselines};
use mtfair_core::trainer::{train, Method, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use rayon::prelude::*;

use crate::config::{DatasetPreset, Range, SweepConfig};
use crate::error::{Result, SweepError};
use crate::runs::{RunRow, RunsTable};

/// What a run needs besides its own config.
pub struct RunContext<'a> {
    pub preset: &'a DatasetPreset,
    pub data: &'a LoadedData,
    pub baselines: &'a StlBaselines,
}

/// Trains on the training split and scores the test split. Failures become flagged rows.
pub fn run_single(ctx: &RunContext<'_>, run_id: &str, config: &TrainConfig) -> RunRow {
    let start = Instant::now();
    let outcome = (|| -> Result<_> {
        let run = train(&ctx.data.train, &ctx.preset.arch, config)?;
        let evals = evaluate_model(&run.model, &ctx.data.test, &ctx.preset.thresholds)?;
        Ok(aggregate(&evals, ctx.baselines)?)
    })();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(metrics) => RunRow::from_metrics(run_id.to_string(), config, &metrics, seconds),
        Err(e) => {
            log::warn!("run {run_id} failed: {e}");
            RunRow::failed(run_id.to_string(), config, &e.to_string(), seconds)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub run_id: String,
    pub config: TrainConfig,
}

fn uniform(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

/// Draws the sweep's configurations. Index `i` has the same weights and seeds for every
/// method, so methods are compared on paired settings.
pub fn sample_configs(sweep: &SweepConfig, preset: &DatasetPreset) -> Result<Vec<PlannedRun>> {
    sweep.validate()?;
    let t = preset.arch.num_tasks;
    let n_configs = sweep.budget.div_ceil(sweep.seeds_per_config);
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.master_seed);
    let dirichlet = (t > 2)
        .then(|| Dirichlet::new_with_size(1.0, t))
        .transpose()
        .map_err(|e| SweepError::Config(format!("task weight distribution: {e}")))?;
    let mut draws = Vec::with_capacity(n_configs);
    for _ in 0..n_configs {
        let w = match (t, &dirichlet) {
            (1, _) => vec![1.0],
            (2, _) => {
                let w1 = uniform(&mut rng, sweep.w1);
                vec![w1, 1.0 - w1]
            }
            (_, Some(d)) => d.sample(&mut rng),
            _ => unreachable!(),
        };
        let lambdas: Vec<f64> = (0..t).map(|_| uniform(&mut rng, sweep.fairness_weight)).collect();
        let ratios: Vec<f64> = (0..t).map(|_| uniform(&mut rng, sweep.head_to_shared_ratio)).collect();
        let seeds: Vec<u64> = (0..sweep.seeds_per_config)
            .map(|_| u64::from(rng.gen::<u32>()))
            .collect();
        draws.push((w, lambdas, ratios, seeds));
    }
    let training = &preset.training;
    let mut planned = Vec::with_capacity(sweep.budget * sweep.methods.len());
    for &method in &sweep.methods {
        let mut count = 0;
        'draws: for (i, (w, lambdas, ratios, seeds)) in draws.iter().enumerate() {
            for &seed in seeds {
                if count == sweep.budget {
                    break 'draws;
                }
                count += 1;
                let config = TrainConfig {
                    method,
                    task_weights: w.clone(),
                    fairness_weights: if method == Method::Vanilla {
                        vec![0.0; t]
                    } else {
                        lambdas.clone()
                    },
                    head_to_shared_ratios: if method == Method::Mtaf {
                        ratios.clone()
                    } else {
                        vec![1.0; t]
                    },
                    fairness: sweep.fairness,
                    target: sweep.target,
                    learning_rate: sweep.learning_rate.unwrap_or(training.learning_rate),
                    epochs: sweep.epochs.unwrap_or(training.epochs),
                    batch_size: sweep.batch_size.unwrap_or(training.batch_size),
                    seed,
                };
                config.validate(t)?;
                planned.push(PlannedRun {
                    run_id: format!("{method}-m{}-c{i:05}-s{seed}", sweep.master_seed),
                    config,
                });
            }
        }
    }
    Ok(planned)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepSummary {
    pub executed: usize,
    /// Planned runs whose id was already in the table.
    pub skipped: usize,
    /// Rows appended with at least one flag.
    pub flagged: usize,
}

/// Executes every planned run not already in `table`, on `jobs` worker threads.
/// Rows are appended as runs finish.
pub fn run_sweep(
    ctx: &RunContext<'_>,
    sweep: &SweepConfig,
    table: &mut RunsTable,
    jobs: usize,
) -> Result<SweepSummary> {
    let planned = sample_configs(sweep, ctx.preset)?;
    let todo: Vec<&PlannedRun> = planned.iter().filter(|p| !table.contains(&p.run_id)).collect();
    let mut summary = SweepSummary {
        skipped: planned.len() - todo.len(),
        ..SweepSummary::default()
    };
    if summary.skipped > 0 {
        log::info!("{} planned runs already in {}", summary.skipped, table.path().display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Config(format!("cannot start worker pool: {e}")))?;
    let total = todo.len();
    let state = Mutex::new((table, 0usize, 0usize, None::<SweepError>));
    pool.install(|| {
        todo.par_iter().for_each(|p| {
            let row = run_single(ctx, &p.run_id, &p.config);
            let flagged = row.is_flagged();
            let mut guard = state.lock().unwrap_or_else(|e| e.into_inner());
            let (table, done, flagged_count, err) = &mut *guard;
            if err.is_some() {
                return;
            }
            match table.append(row) {
                Ok(_) => {
                    *done += 1;
                    *flagged_count += usize::from(flagged);
                    log::info!("[{done}/{total}] {}", p.run_id);
                }
                Err(e) => *err = Some(e),
            }
        })
    });
    let (_, done, flagged, err) = state.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = err {
        return Err(e);
    }
    summary.executed = done;
    summary.flagged = flagged;
    Ok(summary)
}
