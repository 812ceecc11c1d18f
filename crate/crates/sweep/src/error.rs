use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Core(#[from] mtfair_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no single-task baselines for dataset {dataset} at {}; run `mtfair stl-baseline --dataset {dataset} --out <dir>` first", path.display())]
    MissingBaselines { dataset: String, path: PathBuf },

    #[error("runs table {}: {message}", path.display())]
    RunsTable { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SweepError> = std::result::Result<T, E>;

impl SweepError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SweepError::Io {
            path: path.into(),
            source,
        }
    }
}
