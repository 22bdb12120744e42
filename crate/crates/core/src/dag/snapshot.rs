//! Line-delimited JSON snapshot of a DAG: the genesis model, then each
//! round's updates followed by its selections (with the model each produced),
//! then every derived model. Loading replays updates and selections and
//! checks each model line against the replayed result.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dag, DagError, LearnerId, ModelId, SelectionRecord, UpdateId, UpdateRecord};
use crate::digest::Digest;
use crate::params::ParamsPayload;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SnapshotRecord {
    Model {
        model_id: ModelId,
        parent_id: Option<ModelId>,
        created_round: u64,
        aggregated_update_ids: Vec<UpdateId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec_digest: Option<Digest>,
        params: ParamsPayload,
    },
    Update {
        update_id: UpdateId,
        learner_id: LearnerId,
        parent_model_id: ModelId,
        round: u64,
        sample_count: u64,
        params: ParamsPayload,
    },
    Selection {
        learner_id: LearnerId,
        round: u64,
        parent_model_id: ModelId,
        chosen_update_ids: Vec<UpdateId>,
        model_id: ModelId,
    },
}

fn records(dag: &Dag) -> Vec<SnapshotRecord> {
    let mut out = Vec::new();
    let mut models: Vec<_> = dag.models().collect();
    models.sort_by_key(|m| (m.created_round, m.model_id));
    let model_record = |m: &super::ModelNode| SnapshotRecord::Model {
        model_id: m.model_id,
        parent_id: m.parent_id,
        created_round: m.created_round,
        aggregated_update_ids: m.aggregated_update_ids.clone(),
        spec_digest: m.spec_digest,
        params: ParamsPayload::inline(&m.params),
    };
    out.extend(
        models
            .iter()
            .filter(|m| m.is_genesis())
            .map(|m| model_record(m)),
    );
    let mut updates: Vec<_> = dag.updates().collect();
    updates.sort_by_key(|u| (u.round, u.update_id));
    // Already ordered by round.
    let selections = dag.selections();
    // Round by round, so every update's parent exists by the time it is read.
    let (mut u, mut s) = (updates.into_iter().peekable(), selections.peekable());
    while let Some(round) = [u.peek().map(|x| x.round), s.peek().map(|x| x.0.round)]
        .into_iter()
        .flatten()
        .min()
    {
        while let Some(x) = u.next_if(|x| x.round == round) {
            out.push(SnapshotRecord::Update {
                update_id: x.update_id,
                learner_id: x.learner_id,
                parent_model_id: x.parent_model_id,
                round: x.round,
                sample_count: x.sample_count,
                params: ParamsPayload::inline(&x.params),
            });
        }
        while let Some((x, m)) = s.next_if(|x| x.0.round == round) {
            out.push(SnapshotRecord::Selection {
                learner_id: x.learner_id,
                round: x.round,
                parent_model_id: x.parent_model_id,
                chosen_update_ids: x.chosen_update_ids.clone(),
                model_id: *m,
            });
        }
    }
    out.extend(
        models
            .iter()
            .filter(|m| !m.is_genesis())
            .map(|m| model_record(m)),
    );
    out
}

pub fn write_snapshot<W: Write>(dag: &Dag, mut out: W) -> std::io::Result<()> {
    for r in records(dag) {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Rebuilds a DAG from a snapshot. `store` resolves by-reference params.
pub fn load_snapshot<R: BufRead>(input: R, store: Option<&Path>) -> Result<Dag, DagError> {
    let mut dag = Dag::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DagError::Snapshot(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SnapshotRecord = serde_json::from_str(&line)
            .map_err(|e| DagError::Snapshot(format!("line {}: {e}", n + 1)))?;
        match record {
            SnapshotRecord::Model {
                model_id,
                parent_id: None,
                spec_digest,
                params,
                ..
            } => {
                let spec = spec_digest.ok_or_else(|| {
                    DagError::Snapshot(format!("line {}: genesis without spec digest", n + 1))
                })?;
                let id = dag.insert_genesis(params.resolve(store)?, spec)?;
                if id != model_id {
                    return Err(DagError::IdMismatch(model_id));
                }
            }
            SnapshotRecord::Model {
                model_id,
                params,
                aggregated_update_ids,
                ..
            } => {
                let node = dag.model(&model_id)?;
                if node.params != params.resolve(store)?
                    || node.aggregated_update_ids != aggregated_update_ids
                {
                    return Err(DagError::IdMismatch(model_id));
                }
            }
            SnapshotRecord::Update {
                update_id,
                learner_id,
                parent_model_id,
                round,
                sample_count,
                params,
            } => {
                let u = UpdateRecord {
                    update_id,
                    learner_id,
                    parent_model_id,
                    round,
                    params: params.resolve(store)?,
                    sample_count,
                };
                dag.record_update(u)?;
            }
            SnapshotRecord::Selection {
                learner_id,
                round,
                parent_model_id,
                chosen_update_ids,
                model_id,
            } => {
                let got = dag.materialize(&SelectionRecord {
                    learner_id,
                    round,
                    parent_model_id,
                    chosen_update_ids,
                })?;
                if got != model_id {
                    return Err(DagError::IdMismatch(model_id));
                }
            }
        }
    }
    Ok(dag)
}
