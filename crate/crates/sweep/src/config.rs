use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use mtfair_core::data::SplitConfig;
use mtfair_core::losses::{FairnessLoss, FairnessTarget};
use mtfair_core::model::ArchConfig;
use mtfair_core::trainer::Method;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SweepError};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| SweepError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| SweepError::Parse {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Optimizer settings shipped with a dataset preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingDefaults {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Everything needed to train on one dataset: schema, split, architecture,
/// optimizer defaults and evaluation thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPreset {
    pub name: String,
    /// Schema file, relative to the preset file.
    pub schema: PathBuf,
    /// Data paths are relative to the preset file.
    pub split: SplitConfig,
    pub arch: ArchConfig,
    pub training: TrainingDefaults,
    /// Decision threshold per task.
    pub thresholds: Vec<f64>,
    /// Seeds averaged for the single-task baselines.
    pub stl_seeds: Vec<u64>,
    #[serde(default)]
    pub notes: String,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetPreset {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut preset: DatasetPreset = read_json(path)?;
        preset.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        preset.validate()?;
        Ok(preset)
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.thresholds.len() != self.arch.num_tasks {
            return Err(SweepError::Config(format!(
                "preset {}: {} thresholds for {} tasks",
                self.name,
                self.thresholds.len(),
                self.arch.num_tasks
            )));
        }
        if self.stl_seeds.is_empty() {
            return Err(SweepError::Config(format!("preset {}: stl_seeds is empty", self.name)));
        }
        Ok(())
    }

    pub fn schema_path(&self) -> PathBuf {
        self.base_dir.join(&self.schema)
    }

    pub fn resolved_split(&self) -> SplitConfig {
        self.split.resolve(&self.base_dir)
    }
}

/// Directory holding the bundled presets. `MTFAIR_PRESETS` overrides it.
pub fn presets_dir() -> PathBuf {
    std::env::var_os("MTFAIR_PRESETS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("presets"))
}

/// Accepts a bundled preset name (`uci_adult`) or a path to a preset file.
pub fn resolve_dataset(arg: &str) -> Result<DatasetPreset> {
    let as_path = Path::new(arg);
    let path = if as_path.is_file() {
        as_path.to_path_buf()
    } else {
        let bundled = presets_dir().join(format!("{arg}.json"));
        if !bundled.is_file() {
            return Err(SweepError::Config(format!(
                "no preset named {arg:?} in {} and no such file",
                presets_dir().display()
            )));
        }
        bundled
    };
    let text = std::fs::read_to_string(&path).map_err(|e| SweepError::io(&path, e))?;
    if text.contains("\"tasks\"") && !text.contains("\"arch\"") {
        return Err(SweepError::Config(format!(
            "{} is a schema file; pass a dataset preset that references it",
            path.display()
        )));
    }
    DatasetPreset::from_file(&path)
}

/// Closed interval `[lo, hi]` sampled uniformly; `lo == hi` fixes the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(SweepError::Config(format!(
                "{what}: invalid range [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

/// A random search over task weights, fairness weights and head-to-shared ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    /// Runs per method.
    pub budget: usize,
    pub master_seed: u64,
    /// Range of the first task weight; with two tasks the second is `1 - w1`.
    pub w1: Range,
    pub fairness_weight: Range,
    pub head_to_shared_ratio: Range,
    pub fairness: FairnessLoss,
    #[serde(default)]
    pub target: FairnessTarget,
    #[serde(default = "one")]
    pub seeds_per_config: usize,
    /// Optimizer overrides; preset defaults apply when absent.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn one() -> usize {
    1
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: SweepConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(SweepError::Config("sweep needs at least one method".into()));
        }
        if self.budget == 0 || self.seeds_per_config == 0 {
            return Err(SweepError::Config(
                "budget and seeds_per_config must be at least 1".into(),
            ));
        }
        self.w1.validate("w1")?;
        self.fairness_weight.validate("fairness_weight")?;
        self.head_to_shared_ratio.validate("head_to_shared_ratio")?;
        if self.w1.0 < 0.0 || self.w1.1 > 1.0 {
            return Err(SweepError::Config("w1 must lie in [0, 1]".into()));
        }
        if self.fairness_weight.0 < 0.0 || self.head_to_shared_ratio.0 <= 0.0 {
            return Err(SweepError::Config(
                "fairness weights must be >= 0 and ratios > 0".into(),
            ));
        }
        self.fairness.validate()?;
        Ok(())
    }
}
