//! Single-task baselines, cached under `<out>/baselines/<key>.json`.

use std::path::{Path, PathBuf};

use mtfair_core::data::{LoadedData, SplitConfig};
use mtfair_core::metrics::{run_stl_baselines, StlBaselines};
use mtfair_core::trainer::TrainConfig;
use sha2::{Digest, Sha256};

use crate::config::{read_json, DatasetPreset};
use crate::error::{Result, SweepError};

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| SweepError::io(path, e))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Training config used for every single-task run of `preset`.
pub fn baseline_train_config(preset: &DatasetPreset) -> TrainConfig {
    let t = &preset.training;
    TrainConfig::vanilla(1, t.learning_rate, t.epochs, t.batch_size, 0)
}

/// Cache key: data and schema bytes, architecture, optimizer settings, seeds and thresholds.
pub fn baseline_key(preset: &DatasetPreset) -> Result<String> {
    let mut h = Sha256::new();
    hash_file(&mut h, &preset.schema_path())?;
    match preset.resolved_split() {
        SplitConfig::Provided { train, test } => {
            hash_file(&mut h, &train)?;
            hash_file(&mut h, &test)?;
        }
        SplitConfig::Random { file, .. } => hash_file(&mut h, &file)?,
    }
    // Paths are dropped so the key survives moving the data directory.
    let split = match &preset.split {
        SplitConfig::Provided { .. } => serde_json::json!({"kind": "provided"}),
        SplitConfig::Random {
            train_fraction, seed, ..
        } => serde_json::json!({"kind": "random", "train_fraction": train_fraction, "seed": seed}),
    };
    let fields = serde_json::json!({
        "split": split,
        "arch": preset.arch,
        "training": preset.training,
        "seeds": preset.stl_seeds,
        "thresholds": preset.thresholds,
    });
    h.update(serde_json::to_vec(&fields)?);
    Ok(hex::encode(h.finalize()))
}

pub fn baseline_path(out: &Path, key: &str) -> PathBuf {
    out.join("baselines").join(format!("{key}.json"))
}

/// Reads cached baselines for `preset`, failing with instructions when absent.
pub fn load_baselines(preset: &DatasetPreset, out: &Path) -> Result<StlBaselines> {
    let path = baseline_path(out, &baseline_key(preset)?);
    if !path.is_file() {
        return Err(SweepError::MissingBaselines {
            dataset: preset.name.clone(),
            path,
        });
    }
    let baselines: StlBaselines = read_json(&path)?;
    if baselines.num_tasks() != preset.arch.num_tasks {
        return Err(SweepError::Config(format!(
            "{} holds {} tasks, preset {} has {}",
            path.display(),
            baselines.num_tasks(),
            preset.name,
            preset.arch.num_tasks
        )));
    }
    Ok(baselines)
}

/// Trains the single-task models and writes the cache file. Returns the baselines and the file path.
pub fn compute_baselines(preset: &DatasetPreset, data: &LoadedData, out: &Path) -> Result<(StlBaselines, PathBuf)> {
    let key = baseline_key(preset)?;
    let mut baselines = run_stl_baselines(
        &data.train,
        &data.test,
        &preset.arch,
        &baseline_train_config(preset),
        &preset.stl_seeds,
        &preset.thresholds,
    )?;
    if let Some(p) = baselines.provenance.as_mut() {
        p.config_hash = Some(key.clone());
    }
    let path = baseline_path(out, &key);
    let dir = path.parent().expect("baseline path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| SweepError::io(dir, e))?;
    let text = serde_json::to_string_pretty(&baselines)?;
    std::fs::write(&path, text).map_err(|e| SweepError::io(&path, e))?;
    Ok((baselines, path))
}

/// Cached baselines if present, otherwise computed and cached.
pub fn ensure_baselines(preset: &DatasetPreset, data: &LoadedData, out: &Path) -> Result<StlBaselines> {
    match load_baselines(preset, out) {
        Ok(b) => Ok(b),
        Err(SweepError::MissingBaselines { .. }) => compute_baselines(preset, data, out).map(|(b, _)| b),
        Err(e) => Err(e),
    }
}
