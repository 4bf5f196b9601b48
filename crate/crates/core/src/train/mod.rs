//! Training loop, evaluation metrics, the ablation runner and results files.

mod ablation;
mod config;
mod metrics;
mod results;
mod trainer;

pub use ablation::{run_ablation, AblationReport, AblationRow, TextSource};
pub(crate) use results::checksum_hex;
pub use config::{AblationMode, LossKind, TrainConfig};
pub use metrics::{confusion, Metrics};
pub use results::{FinalMetrics, ResultsFile, ARTIFACT_VERSION};
pub use trainer::{
    evaluate, init_params, predict_dataset, train, EpochRecord, History, TrainOutcome,
};
