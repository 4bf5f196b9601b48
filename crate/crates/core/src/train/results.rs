use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablation::AblationReport;
use super::config::TrainConfig;
use super::metrics::Metrics;
use super::trainer::History;
use crate::{Error, Result};

pub const ARTIFACT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub validation: Option<Metrics>,
    pub test: Option<Metrics>,
}

/// Everything a run produced, minus timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub artifact_version: String,
    pub seed: u64,
    pub dataset: String,
    pub config: TrainConfig,
    pub history: History,
    pub final_metrics: FinalMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationReport>,
    pub initial_param_checksum: String,
    pub final_param_checksum: String,
}

impl ResultsFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn checksum_hex(sum: u64) -> String {
    format!("{sum:016x}")
}
