//! Runs, single-task baselines, sweeps and Pareto reports on top of `mtfair-core`.

pub mod baselines;
pub mod config;
pub mod error;
pub mod report;
pub mod runs;
pub mod sweep;

pub use config::{presets_dir, resolve_dataset, DatasetPreset, Range, SweepConfig, TrainingDefaults};
pub use error::{Result, SweepError};
pub use report::{build_report, emit_reports, Axes, AxesReport, MethodReport};
pub use runs::{read_runs, RunRow, RunsTable, TaskCells};
pub use sweep::{run_single, run_sweep, sample_configs, PlannedRun, RunContext, SweepSummary};

use mtfair_core::data::{load_split, LoadedData, Schema};

/// Loads the train and test splits of a preset.
pub fn load_preset_data(preset: &DatasetPreset) -> Result<LoadedData> {
    let schema = Schema::from_json_file(preset.schema_path())?;
    let data = load_split(&schema, &preset.resolved_split())?;
    log::info!(
        "{}: {} train rows, {} test rows ({} test rows rejected)",
        preset.name,
        data.train.len(),
        data.test.len(),
        data.test.rejected_rows()
    );
    Ok(data)
}
