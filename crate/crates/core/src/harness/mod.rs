//! Experiment configuration, the round driver and its artifacts.

mod config;
mod experiment;
mod metrics;
mod report;

pub use config::{
    ConfigError, DataSection, ExperimentConfig, NetSection, PartitionSection, SourceSection,
    ToleranceSetting, TrainingSection, TransportSection,
};
pub use experiment::{
    run_experiment, ExperimentOutput, DOT_FILE, LOG_FILE, METRICS_FILE, MODEL_STORE_DIR,
    SNAPSHOT_FILE,
};
pub use metrics::{
    local_values, read_metrics, summarize, write_metrics, MetricsRow, RoundSummary, METRICS_HEADER,
};
pub use report::{preview_partition, report};

use crate::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::data::DataError> for HarnessError {
    fn from(e: crate::data::DataError) -> Self {
        HarnessError::Config(e.into())
    }
}
