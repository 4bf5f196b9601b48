use serde::{Deserialize, Serialize};

use super::config::{AblationMode, TrainConfig};
use super::metrics::Metrics;
use super::trainer::{evaluate, train, History};
use crate::featurize::{text_features, EmbeddingProvider, PromptTemplate, TextMode};
use crate::model::Variant;
use crate::ingest::{split, Dataset};
use crate::{Error, Result};

/// Re-featurizes `raw_text` per text mode. Without one, every text
/// configuration trains on the stored text embeddings.
pub struct TextSource<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub template: PromptTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub label: String,
    pub validation: Option<Metrics>,
    pub test: Option<Metrics>,
    pub final_train_loss: f64,
    /// Training wall-clock of the run behind this row.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

fn refeaturize(ds: &Dataset, mode: AblationMode, src: &TextSource<'_>, seed: u64) -> Result<Dataset> {
    let Some(tm) = mode.text_mode() else {
        return Ok(ds.clone());
    };
    let mut records = ds.records.clone();
    for r in &mut records {
        let text = r.raw_text.as_deref().ok_or_else(|| Error::Record {
            id: r.id.clone(),
            message: "missing raw_text".into(),
        })?;
        r.text_embedding = text_features(tm, &src.template, text, src.provider, seed, None)?;
    }
    Dataset::new(ds.name.clone(), records)
}

/// Trains and scores all six configurations on one split and seed.
/// Configurations that reduce to the same model on the same data (the text
/// modes when no text source is given) are trained once and share a row.
/// Returns the report and the fusion configuration's history.
pub fn run_ablation(
    base: &TrainConfig,
    ds: &Dataset,
    text: Option<&TextSource<'_>>,
) -> Result<(AblationReport, History)> {
    base.validate()?;
    let mut rows: Vec<AblationRow> = Vec::with_capacity(AblationMode::ALL.len());
    let mut done: Vec<((Variant, Option<TextMode>), usize)> = Vec::new();
    let mut fusion_history = Vec::new();
    for mode in AblationMode::ALL {
        let key = (mode.variant(), text.and(mode.text_mode()));
        if let Some(&(_, i)) = done.iter().find(|(k, _)| *k == key) {
            let row = AblationRow { mode, label: mode.label().to_string(), ..rows[i].clone() };
            rows.push(row);
            continue;
        }
        let data = match text {
            Some(src) => refeaturize(ds, mode, src, base.seed)?,
            None => ds.clone(),
        };
        let (tr, va, te) = split(&data, &base.split, base.seed)?;
        let cfg = TrainConfig { ablation_mode: mode, ..base.clone() };
        let started = std::time::Instant::now();
        let out = train(&cfg, &tr, &va)?;
        let seconds = started.elapsed().as_secs_f64();
        let score = |d: &Dataset| -> Result<Option<Metrics>> {
            if d.is_empty() {
                Ok(None)
            } else {
                evaluate(&out.model, &out.params, d).map(Some)
            }
        };
        done.push((key, rows.len()));
        rows.push(AblationRow {
            mode,
            label: mode.label().to_string(),
            validation: score(&va)?,
            test: score(&te)?,
            final_train_loss: out.history.last().map_or(f64::NAN, |h| h.train_loss),
            seconds,
        });
        if mode == AblationMode::Fusion {
            fusion_history = out.history;
        }
    }
    Ok((AblationReport { rows }, fusion_history))
}
