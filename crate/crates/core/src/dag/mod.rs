//! Content-addressed DAG of model evolution.
//!
//! Nodes are models; every non-genesis model is the FedAvg of a set of
//! updates submitted against one parent. Updates and selections are stored
//! alongside so any replica fed the same records reaches the same state.
//! Nothing is ever removed or mutated.

mod dot;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Hasher};
use crate::params::{ParamError, ParamVector};
use crate::rules::{self, RuleError};

pub use dot::export_dot;
pub use snapshot::{load_snapshot, write_snapshot, SnapshotRecord};

pub type ModelId = Digest;
pub type UpdateId = Digest;
pub type LearnerId = u32;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DagError {
    #[error("genesis model already present")]
    GenesisExists,
    #[error("unknown parent model {0}")]
    UnknownParent(ModelId),
    #[error("unknown model {0}")]
    UnknownModel(ModelId),
    #[error("unknown update {0}")]
    UnknownUpdate(UpdateId),
    #[error("learner {learner} already submitted an update to {parent} in round {round}")]
    DuplicateUpdate {
        learner: LearnerId,
        parent: ModelId,
        round: u64,
    },
    #[error("update round {round} is not after its parent's round {parent_round}")]
    StaleRound { round: u64, parent_round: u64 },
    #[error("selection is empty")]
    EmptySelection,
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("content id mismatch for {0}")]
    IdMismatch(Digest),
    #[error("learner {learner} published two different selections for {parent} in round {round}")]
    ConflictingSelection {
        learner: LearnerId,
        parent: ModelId,
        round: u64,
    },
    #[error("sample count must be positive")]
    ZeroSamples,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// A parameter vector trained by one learner against a parent model.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub update_id: UpdateId,
    pub learner_id: LearnerId,
    pub parent_model_id: ModelId,
    pub round: u64,
    pub params: ParamVector,
    /// Training samples behind the update; its FedAvg weight.
    pub sample_count: u64,
}

impl UpdateRecord {
    pub fn new(
        learner_id: LearnerId,
        parent_model_id: ModelId,
        round: u64,
        params: ParamVector,
        sample_count: u64,
    ) -> Self {
        let update_id = Self::content_id(learner_id, &parent_model_id, round, &params);
        UpdateRecord {
            update_id,
            learner_id,
            parent_model_id,
            round,
            params,
            sample_count,
        }
    }

    pub fn content_id(
        learner_id: LearnerId,
        parent: &ModelId,
        round: u64,
        params: &ParamVector,
    ) -> UpdateId {
        Hasher::new("update")
            .u64(learner_id as u64)
            .digest(parent)
            .u64(round)
            .bytes(&params.to_bytes())
            .finish()
    }

    pub fn verify(&self) -> Result<(), DagError> {
        if self.sample_count == 0 {
            return Err(DagError::ZeroSamples);
        }
        let expected = Self::content_id(
            self.learner_id,
            &self.parent_model_id,
            self.round,
            &self.params,
        );
        if expected != self.update_id {
            return Err(DagError::IdMismatch(self.update_id));
        }
        Ok(())
    }
}

/// A learner's accepted updates for one parent in one round; the recipe for
/// a child model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub learner_id: LearnerId,
    pub round: u64,
    pub parent_model_id: ModelId,
    pub chosen_update_ids: Vec<UpdateId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelNode {
    pub model_id: ModelId,
    /// `None` for the genesis model.
    pub parent_id: Option<ModelId>,
    pub created_round: u64,
    /// Sorted ascending.
    pub aggregated_update_ids: Vec<UpdateId>,
    pub params: ParamVector,
    /// Architecture digest; only set on the genesis model.
    pub spec_digest: Option<Digest>,
}

impl ModelNode {
    pub fn is_genesis(&self) -> bool {
        self.parent_id.is_none()
    }
}

fn genesis_id(params: &ParamVector, spec_digest: &Digest) -> ModelId {
    Hasher::new("genesis")
        .digest(spec_digest)
        .bytes(&params.to_bytes())
        .finish()
}

fn model_id(parent: &ModelId, sorted_updates: &[UpdateId], params: &ParamVector) -> ModelId {
    let mut h = Hasher::new("model")
        .digest(parent)
        .u64(sorted_updates.len() as u64);
    for u in sorted_updates {
        h = h.digest(u);
    }
    h.bytes(&params.to_bytes()).finish()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dag {
    genesis: Option<ModelId>,
    models: BTreeMap<ModelId, ModelNode>,
    updates: BTreeMap<UpdateId, UpdateRecord>,
    /// (parent, round) -> update ids.
    slots: BTreeMap<(ModelId, u64), BTreeSet<UpdateId>>,
    submitted: BTreeSet<(LearnerId, ModelId, u64)>,
    /// (round, parent, learner) -> (selection, resulting model).
    selections: BTreeMap<(u64, ModelId, LearnerId), (SelectionRecord, ModelId)>,
    children: BTreeMap<ModelId, BTreeSet<ModelId>>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_genesis(
        &mut self,
        params: ParamVector,
        spec_digest: Digest,
    ) -> Result<ModelId, DagError> {
        if self.genesis.is_some() {
            return Err(DagError::GenesisExists);
        }
        let id = genesis_id(&params, &spec_digest);
        self.models.insert(
            id,
            ModelNode {
                model_id: id,
                parent_id: None,
                created_round: 0,
                aggregated_update_ids: Vec::new(),
                params,
                spec_digest: Some(spec_digest),
            },
        );
        self.genesis = Some(id);
        Ok(id)
    }

    pub fn genesis(&self) -> Option<ModelId> {
        self.genesis
    }

    pub fn model(&self, id: &ModelId) -> Result<&ModelNode, DagError> {
        self.models.get(id).ok_or(DagError::UnknownModel(*id))
    }

    pub fn update(&self, id: &UpdateId) -> Result<&UpdateRecord, DagError> {
        self.updates.get(id).ok_or(DagError::UnknownUpdate(*id))
    }

    pub fn contains_model(&self, id: &ModelId) -> bool {
        self.models.contains_key(id)
    }

    pub fn contains_update(&self, id: &UpdateId) -> bool {
        self.updates.contains_key(id)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelNode> {
        self.models.values()
    }

    pub fn updates(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.updates.values()
    }

    pub fn selections(&self) -> impl Iterator<Item = (&SelectionRecord, &ModelId)> {
        self.selections.values().map(|(s, m)| (s, m))
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    pub fn record_update(&mut self, u: UpdateRecord) -> Result<UpdateId, DagError> {
        u.verify()?;
        let parent = self
            .models
            .get(&u.parent_model_id)
            .ok_or(DagError::UnknownParent(u.parent_model_id))?;
        if u.round <= parent.created_round {
            return Err(DagError::StaleRound {
                round: u.round,
                parent_round: parent.created_round,
            });
        }
        parent.params.check_same_len(&u.params)?;
        let key = (u.learner_id, u.parent_model_id, u.round);
        if !self.submitted.insert(key) {
            return Err(DagError::DuplicateUpdate {
                learner: u.learner_id,
                parent: u.parent_model_id,
                round: u.round,
            });
        }
        let id = u.update_id;
        self.slots
            .entry((u.parent_model_id, u.round))
            .or_default()
            .insert(id);
        self.updates.insert(id, u);
        Ok(id)
    }

    /// Updates submitted to `parent` in `round`, by ascending id.
    pub fn updates_for(&self, parent: &ModelId, round: u64) -> Vec<&UpdateRecord> {
        self.slots
            .get(&(*parent, round))
            .into_iter()
            .flatten()
            .map(|id| &self.updates[id])
            .collect()
    }

    /// Aggregates the selected updates into a child of the selection's parent.
    /// Identical selections (as sets) produce the same node, so materializing
    /// is idempotent and replicas agree on ids.
    pub fn materialize(&mut self, selection: &SelectionRecord) -> Result<ModelId, DagError> {
        if selection.chosen_update_ids.is_empty() {
            return Err(DagError::EmptySelection);
        }
        let parent = selection.parent_model_id;
        if !self.models.contains_key(&parent) {
            return Err(DagError::UnknownParent(parent));
        }
        let mut ids = selection.chosen_update_ids.clone();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DagError::InvalidSelection("duplicate update id".into()));
        }
        let mut own = false;
        for id in &ids {
            let u = self.update(id)?;
            if u.parent_model_id != parent || u.round != selection.round {
                return Err(DagError::InvalidSelection(format!(
                    "update {} belongs to {} round {}",
                    id.short(),
                    u.parent_model_id.short(),
                    u.round
                )));
            }
            own |= u.learner_id == selection.learner_id;
        }
        if !own {
            return Err(DagError::InvalidSelection(format!(
                "learner {} did not include its own update",
                selection.learner_id
            )));
        }
        let key = (selection.round, parent, selection.learner_id);
        if let Some((existing, model)) = self.selections.get(&key) {
            let mut prev = existing.chosen_update_ids.clone();
            prev.sort();
            return if prev == ids {
                Ok(*model)
            } else {
                Err(DagError::ConflictingSelection {
                    learner: selection.learner_id,
                    parent,
                    round: selection.round,
                })
            };
        }

        let params: Vec<&ParamVector> = ids.iter().map(|id| &self.updates[id].params).collect();
        let weights: Vec<f64> = ids
            .iter()
            .map(|id| self.updates[id].sample_count as f64)
            .collect();
        let averaged = rules::fedavg(&params, &weights)?;
        let id = model_id(&parent, &ids, &averaged);
        self.models.entry(id).or_insert_with(|| ModelNode {
            model_id: id,
            parent_id: Some(parent),
            created_round: selection.round,
            aggregated_update_ids: ids,
            params: averaged,
            spec_digest: None,
        });
        self.children.entry(parent).or_default().insert(id);
        self.selections.insert(key, (selection.clone(), id));
        Ok(id)
    }

    /// Number of updates aggregated into the model; 1 for genesis.
    pub fn popularity(&self, id: &ModelId) -> Result<usize, DagError> {
        let node = self.model(id)?;
        Ok(if node.is_genesis() {
            1
        } else {
            node.aggregated_update_ids.len()
        })
    }

    /// Candidates for selection in `round`: the models created in the round
    /// before, by ascending id. Models that nobody trains leave no children
    /// and so drop out of every later active set.
    pub fn active_models(&self, round: u64) -> Vec<ModelId> {
        let Some(prev) = round.checked_sub(1) else {
            return Vec::new();
        };
        self.models
            .values()
            .filter(|m| m.created_round == prev)
            .map(|m| m.model_id)
            .collect()
    }

    pub fn children(&self, parent: &ModelId) -> Vec<ModelId> {
        self.children
            .get(parent)
            .map(|c| c.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Extra children created in `round`: for each parent with `k` children
    /// that round, `k - 1`.
    pub fn fork_count(&self, round: u64) -> usize {
        let mut per_parent: BTreeMap<ModelId, usize> = BTreeMap::new();
        for m in self.models.values().filter(|m| m.created_round == round) {
            if let Some(p) = m.parent_id {
                *per_parent.entry(p).or_default() += 1;
            }
        }
        per_parent.values().map(|k| k - 1).sum()
    }

    /// Learners whose published selection produced the model.
    pub fn selectors(&self, id: &ModelId) -> Vec<LearnerId> {
        let mut out: Vec<LearnerId> = self
            .selections
            .values()
            .filter(|(_, m)| m == id)
            .map(|(s, _)| s.learner_id)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Models ordered so that every parent precedes its children, or `None`
    /// if the parent links contain a cycle.
    pub fn topological_order(&self) -> Option<Vec<ModelId>> {
        let mut indegree: BTreeMap<ModelId, usize> = BTreeMap::new();
        let mut kids: BTreeMap<ModelId, Vec<ModelId>> = BTreeMap::new();
        for m in self.models.values() {
            indegree.entry(m.model_id).or_default();
            if let Some(p) = m.parent_id {
                *indegree.entry(m.model_id).or_default() += 1;
                kids.entry(p).or_default().push(m.model_id);
            }
        }
        let mut ready: Vec<ModelId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(id) = ready.pop() {
            order.push(id);
            for k in kids.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(k).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(*k);
                }
            }
        }
        (order.len() == self.models.len()).then_some(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn with_genesis() -> (Dag, ModelId) {
        let mut dag = Dag::new();
        let g = dag
            .insert_genesis(pv(&[1.0, 1.0]), Digest::of(b"spec"))
            .unwrap();
        (dag, g)
    }

    fn upd(dag: &mut Dag, learner: LearnerId, parent: ModelId, round: u64, v: &[f64]) -> UpdateId {
        dag.record_update(UpdateRecord::new(learner, parent, round, pv(v), 10))
            .unwrap()
    }

    fn select(
        learner: LearnerId,
        round: u64,
        parent: ModelId,
        ids: &[UpdateId],
    ) -> SelectionRecord {
        SelectionRecord {
            learner_id: learner,
            round,
            parent_model_id: parent,
            chosen_update_ids: ids.to_vec(),
        }
    }

    #[test]
    fn genesis_once() {
        let (mut dag, g) = with_genesis();
        assert_eq!(dag.model_count(), 1);
        assert!(dag.children(&g).is_empty());
        assert_eq!(
            dag.insert_genesis(pv(&[1.0, 1.0]), Digest::of(b"spec")),
            Err(DagError::GenesisExists)
        );
        let (_, g2) = with_genesis();
        assert_eq!(g, g2);
        assert_eq!(dag.popularity(&g).unwrap(), 1);
        assert_eq!(dag.active_models(1), vec![g]);
    }

    #[test]
    fn update_bookkeeping() {
        let (mut dag, g) = with_genesis();
        upd(&mut dag, 1, g, 1, &[1.0, 2.0]);
        assert_eq!(dag.updates_for(&g, 1).len(), 1);
        upd(&mut dag, 2, g, 1, &[1.0, 3.0]);
        assert_eq!(dag.updates_for(&g, 1).len(), 2);
        let dup = UpdateRecord::new(1, g, 1, pv(&[5.0, 5.0]), 10);
        assert!(matches!(
            dag.record_update(dup),
            Err(DagError::DuplicateUpdate { .. })
        ));
        let orphan = UpdateRecord::new(3, Digest::of(b"nope"), 1, pv(&[1.0, 1.0]), 10);
        assert!(matches!(
            dag.record_update(orphan),
            Err(DagError::UnknownParent(_))
        ));
        let stale = UpdateRecord::new(4, g, 0, pv(&[1.0, 1.0]), 10);
        assert!(matches!(
            dag.record_update(stale),
            Err(DagError::StaleRound { .. })
        ));
        let mut forged = UpdateRecord::new(5, g, 1, pv(&[1.0, 1.0]), 10);
        forged.params = pv(&[9.0, 9.0]);
        assert!(matches!(
            dag.record_update(forged),
            Err(DagError::IdMismatch(_))
        ));
    }

    #[test]
    fn identical_selections_collapse_and_differences_fork() {
        let (mut dag, g) = with_genesis();
        let a = upd(&mut dag, 1, g, 1, &[1.0, 2.0]);
        let b = upd(&mut dag, 2, g, 1, &[2.0, 2.0]);
        let c = upd(&mut dag, 3, g, 1, &[3.0, 2.0]);
        let m1 = dag.materialize(&select(1, 1, g, &[a, b, c])).unwrap();
        let m2 = dag.materialize(&select(2, 1, g, &[b, c, a])).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(dag.model_count(), 2);
        assert_eq!(dag.fork_count(1), 0);
        // learner 3 leaves out learner 1
        let m3 = dag.materialize(&select(3, 1, g, &[c, b])).unwrap();
        assert_ne!(m1, m3);
        assert_eq!(dag.children(&g).len(), 2);
        assert_eq!(dag.fork_count(1), 1);
        assert_eq!(dag.popularity(&m1).unwrap(), 3);
        assert_eq!(dag.popularity(&m3).unwrap(), 2);
        assert_eq!(dag.model(&m1).unwrap().params, pv(&[2.0, 2.0]));
        assert_eq!(dag.selectors(&m1), vec![1, 2]);
        let mut active = vec![m1, m3];
        active.sort();
        assert_eq!(dag.active_models(2), active);
        // the genesis got updates but is no longer a candidate
        assert!(!dag.active_models(2).contains(&g));
    }

    #[test]
    fn materialize_errors() {
        let (mut dag, g) = with_genesis();
        let a = upd(&mut dag, 1, g, 1, &[1.0, 2.0]);
        let b = upd(&mut dag, 2, g, 1, &[2.0, 2.0]);
        assert_eq!(
            dag.materialize(&select(1, 1, g, &[])),
            Err(DagError::EmptySelection)
        );
        assert!(matches!(
            dag.materialize(&select(1, 1, g, &[a, Digest::of(b"x")])),
            Err(DagError::UnknownUpdate(_))
        ));
        assert!(matches!(
            dag.materialize(&select(3, 1, g, &[a, b])),
            Err(DagError::InvalidSelection(_))
        ));
        assert!(matches!(
            dag.materialize(&select(1, 2, g, &[a])),
            Err(DagError::InvalidSelection(_))
        ));
        dag.materialize(&select(1, 1, g, &[a])).unwrap();
        assert!(matches!(
            dag.materialize(&select(1, 1, g, &[a, b])),
            Err(DagError::ConflictingSelection { .. })
        ));
    }

    #[test]
    fn content_addressing_sensitive_to_params() {
        let (mut d1, g) = with_genesis();
        let (mut d2, _) = with_genesis();
        let a1 = upd(&mut d1, 1, g, 1, &[1.0, 2.0]);
        let a2 = upd(&mut d2, 1, g, 1, &[1.0, 2.000_000_000_000_001]);
        assert_ne!(a1, a2);
        let m1 = d1.materialize(&select(1, 1, g, &[a1])).unwrap();
        let m2 = d2.materialize(&select(1, 1, g, &[a2])).unwrap();
        assert_ne!(m1, m2);
    }

    #[test]
    fn dead_models_leave_the_active_set() {
        let (mut dag, g) = with_genesis();
        let a = upd(&mut dag, 1, g, 1, &[1.0, 2.0]);
        let b = upd(&mut dag, 2, g, 1, &[5.0, 2.0]);
        let ma = dag.materialize(&select(1, 1, g, &[a])).unwrap();
        let mb = dag.materialize(&select(2, 1, g, &[b])).unwrap();
        // both learners train model A in round 2; B receives nothing
        let a2 = upd(&mut dag, 1, ma, 2, &[1.0, 2.5]);
        let b2 = upd(&mut dag, 2, ma, 2, &[1.5, 2.5]);
        let next = dag.materialize(&select(1, 2, ma, &[a2, b2])).unwrap();
        dag.materialize(&select(2, 2, ma, &[b2, a2])).unwrap();
        assert_eq!(dag.active_models(3), vec![next]);
        assert!(dag.contains_model(&mb));
        assert!(dag.topological_order().is_some());
    }
}
