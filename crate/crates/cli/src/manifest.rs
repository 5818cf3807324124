use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simcgnn::training::TrainConfig;

use crate::error::{read, write, CliError, CliResult};

/// File names inside a run directory.
pub mod layout {
    pub const MANIFEST: &str = "manifest.json";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const DIVERGED_CHECKPOINT: &str = "model.diverged.ckpt";
    pub const REPORT: &str = "report.jsonl";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const METRICS_JSONL: &str = "metrics.jsonl";
    pub const CONFUSION_CSV: &str = "confusion.csv";
    pub const CONFUSION_COMPARE_CSV: &str = "confusion_compare.csv";
    pub const ANALYSIS_JSON: &str = "analysis.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    /// SHA-256 of the serialized bundle.
    pub fingerprint: String,
    pub vocabulary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

/// Everything needed to rerun a training command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved: every default is written out.
    pub config: TrainConfig,
    pub dataset: DatasetRef,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn new(config: TrainConfig, dataset: DatasetRef, run_dir: &Path) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config,
            dataset,
            artifacts: Artifacts {
                checkpoint: run_dir.join(layout::CHECKPOINT),
                report: run_dir.join(layout::REPORT),
            },
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write(path, text)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let manifest: RunManifest =
            serde_json::from_str(&read(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if manifest.seed != manifest.config.seed {
            return Err(CliError::usage(format!(
                "{}: seed {} disagrees with config seed {}",
                path.display(),
                manifest.seed,
                manifest.config.seed
            )));
        }
        Ok(manifest)
    }
}
