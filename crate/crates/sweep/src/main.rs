use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtfair_core::trainer::TrainConfig;
use mtfair_sweep::baselines::{compute_baselines, ensure_baselines, load_baselines};
use mtfair_sweep::config::read_json;
use mtfair_sweep::{
    emit_reports, load_preset_data, read_runs, resolve_dataset, run_single, run_sweep, Axes, Result, RunContext,
    RunsTable, SweepConfig,
};

#[derive(Parser)]
#[command(
    name = "mtfair",
    version,
    about = "Fairness-aware multi-task training, sweeps and Pareto reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the single-task baselines of a dataset and cache them under <out>/baselines.
    StlBaseline {
        /// Preset name or preset file.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model, appending a row to <out>/runs.csv.
    Train {
        #[arg(long)]
        dataset: String,
        /// Training config JSON; vanilla with preset defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        run_id: Option<String>,
        /// Compute missing baselines instead of failing.
        #[arg(long)]
        compute_baselines: bool,
    },
    /// Run a random search, appending rows to <out>/runs.csv.
    Sweep {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        compute_baselines: bool,
    },
    /// Write frontier JSON and plot CSV files for a runs table.
    Report {
        /// Directory holding runs.csv; reports are written here.
        #[arg(long)]
        out: PathBuf,
        /// Runs table to read instead of <out>/runs.csv.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Axes to report (are_arfg, err_fpr_task<N>, accuracy, fairness); all when omitted.
        #[arg(long, value_delimiter = ',')]
        axes: Vec<String>,
    },
}

fn runs_path(out: &Path) -> PathBuf {
    out.join("runs.csv")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::StlBaseline { dataset, out } => {
            let preset = resolve_dataset(&dataset)?;
            let data = load_preset_data(&preset)?;
            let (b, path) = compute_baselines(&preset, &data, &out)?;
            for t in 0..b.num_tasks() {
                println!("task {}: err {:.4} fpr_gap {:.4}", t + 1, b.err[t], b.fpr_gap[t]);
            }
            println!("wrote {}", path.display());
        }
        Command::Train {
            dataset,
            config,
            out,
            seed,
            run_id,
            compute_baselines,
        } => {
            let preset = resolve_dataset(&dataset)?;
            let mut cfg = match config {
                Some(p) => read_json::<TrainConfig>(&p)?,
                None => {
                    let t = &preset.training;
                    TrainConfig::vanilla(preset.arch.num_tasks, t.learning_rate, t.epochs, t.batch_size, 0)
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if !compute_baselines {
                load_baselines(&preset, &out)?;
            }
            let data = load_preset_data(&preset)?;
            let baselines = ensure_baselines(&preset, &data, &out)?;
            let ctx = RunContext {
                preset: &preset,
                data: &data,
                baselines: &baselines,
            };
            let id = run_id.unwrap_or_else(|| format!("{}-s{}", cfg.method, cfg.seed));
            let row = run_single(&ctx, &id, &cfg);
            let mut table = RunsTable::open(&runs_path(&out), preset.arch.num_tasks)?;
            for (t, c) in row.tasks.iter().enumerate() {
                println!("task {}: err {:?} fpr_gap {:?}", t + 1, c.err, c.fpr_gap);
            }
            println!("are {:?} arfg {:?} flags {:?}", row.are, row.arfg, row.flags);
            let id = table.append(row)?;
            println!("appended {id} to {}", table.path().display());
        }
        Command::Sweep {
            dataset,
            config,
            out,
            seed,
            jobs,
            compute_baselines,
        } => {
            let preset = resolve_dataset(&dataset)?;
            let mut sweep = SweepConfig::from_file(&config)?;
            if let Some(s) = seed {
                sweep.master_seed = s;
            }
            if !compute_baselines {
                load_baselines(&preset, &out)?;
            }
            let data = load_preset_data(&preset)?;
            let baselines = ensure_baselines(&preset, &data, &out)?;
            let ctx = RunContext {
                preset: &preset,
                data: &data,
                baselines: &baselines,
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let mut table = RunsTable::open(&runs_path(&out), preset.arch.num_tasks)?;
            let s = run_sweep(&ctx, &sweep, &mut table, jobs)?;
            println!(
                "{} runs executed ({} flagged), {} already present; table {}",
                s.executed,
                s.flagged,
                s.skipped,
                table.path().display()
            );
        }
        Command::Report { out, runs, axes } => {
            let path = runs.unwrap_or_else(|| runs_path(&out));
            let rows = read_runs(&path)?;
            let num_tasks = rows.first().map_or(0, |r| r.num_tasks());
            let axes: Vec<Axes> = if axes.is_empty() {
                Axes::all(num_tasks)
            } else {
                axes.iter().map(|a| a.parse()).collect::<Result<_>>()?
            };
            for (report, file) in emit_reports(&rows, &axes, &out)? {
                let order: Vec<String> = report.quality_order.iter().map(|m| m.to_string()).collect();
                println!(
                    "{}: quality order {} -> {}",
                    report.axes,
                    order.join(" > "),
                    file.display()
                );
                for m in &report.methods {
                    println!(
                        "  {:<8} quality {:.6} frontier {} of {} ({} failed, {} undefined excluded)",
                        m.method.to_string(),
                        m.frontier_quality,
                        m.frontier.len(),
                        m.runs,
                        m.excluded_failed,
                        m.excluded_undefined
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
