use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;

use super::config::ExperimentConfig;
use super::metrics::{write_metrics, MetricsRow};
use super::HarnessError;
use crate::dag::{export_dot, write_snapshot};
use crate::protocol::{Mode, Network};
use crate::transport::write_log;

pub const METRICS_FILE: &str = "metrics.csv";
pub const DOT_FILE: &str = "dag.dot";
pub const SNAPSHOT_FILE: &str = "dag.jsonl";
pub const LOG_FILE: &str = "messages.log";
pub const MODEL_STORE_DIR: &str = "models";

pub struct ExperimentOutput {
    pub mode: Mode,
    pub rows: Vec<MetricsRow>,
    pub network: Network,
}

impl ExperimentOutput {
    pub fn final_round(&self) -> u64 {
        self.network.round()
    }
}

/// Builds the network from the config, runs every round and, when `out_dir`
/// is given, writes the artifacts there.
pub fn run_experiment(
    config: &ExperimentConfig,
    mode: Mode,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput, HarnessError> {
    let transport = config.transport();
    let store = match out_dir {
        Some(dir) if transport.by_reference => {
            let store = dir.join(MODEL_STORE_DIR);
            std::fs::create_dir_all(&store)?;
            Some(store)
        }
        _ => None,
    };
    let (_, splits) = config.splits()?;
    let learner_config = config.learner_config(mode, store)?;
    let mut network = Network::from_splits(splits, &config.tolerances()?, &learner_config)?;

    let mut rows = Vec::new();
    for _ in 0..config.rounds {
        let outcomes = network.run_round()?;
        let round = network.round();
        let dag = network.dag();
        let active = dag.active_models(round + 1).len();
        let forks = dag.fork_count(round);
        info!("round {round}: {active} active models, {forks} forks");
        for o in outcomes {
            for m in &o.models {
                rows.push(MetricsRow {
                    round,
                    learner_id: o.learner,
                    model_id: m.model,
                    metric_kind: learner_config.metric,
                    value: m.metric,
                    models_trained: o.models_trained(),
                    active_model_count: active,
                    fork_count_this_round: forks,
                });
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_metrics(&rows, BufWriter::new(File::create(dir.join(METRICS_FILE))?))?;
        std::fs::write(dir.join(DOT_FILE), export_dot(network.dag()))?;
        let mut snap = BufWriter::new(File::create(dir.join(SNAPSHOT_FILE))?);
        write_snapshot(network.dag(), &mut snap)?;
        snap.flush()?;
        if transport.record {
            let mut log = BufWriter::new(File::create(dir.join(LOG_FILE))?);
            write_log(network.log(), &mut log)?;
            log.flush()?;
        }
    }
    Ok(ExperimentOutput {
        mode,
        rows,
        network,
    })
}
