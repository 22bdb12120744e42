use std::path::PathBuf;

use log::warn;

use super::ProtocolError;
use crate::dag::{Dag, DagError, LearnerId, ModelId, SelectionRecord, UpdateRecord};
use crate::data::LearnerSplit;
use crate::nn::{self, NetSpec, NnError, TrainConfig};
use crate::params::{ParamVector, ParamsPayload};
use crate::rules::{self, MetricKind, ScoredModel, Tolerance};
use crate::seed;
use crate::transport::{Bus, Envelope, MessageKind, Payload, UpdatePayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Select,
    Train,
    Share,
    Aggregate,
    Publish,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Model selection plus divergence-filtered aggregation.
    Confederated,
    /// One global model; every update is aggregated.
    Baseline,
}

/// Settings shared by every learner in a network.
#[derive(Clone, Debug)]
pub struct LearnerConfig {
    pub spec: NetSpec,
    pub metric: MetricKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    /// When set, update parameters are written here and sent by reference.
    pub model_store: Option<PathBuf>,
}

/// Post-aggregation result for one model the learner trained.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub parent: ModelId,
    pub model: ModelId,
    /// Raw metric of the aggregated model on the learner's test split.
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub round: u64,
    pub learner: LearnerId,
    pub models: Vec<TrainedModel>,
    pub updates_sent: usize,
    pub selections_sent: usize,
}

impl RoundOutcome {
    pub fn models_trained(&self) -> usize {
        self.models.len()
    }
}

pub struct LearnerState {
    id: LearnerId,
    phase: Phase,
    round: u64,
    data: LearnerSplit,
    tolerance: Tolerance,
    config: LearnerConfig,
    dag: Dag,
    roster: Vec<LearnerId>,
    selected: Vec<ModelId>,
    own_updates: Vec<UpdateRecord>,
    /// Peer updates of the current round, in received order.
    peer_updates: Vec<UpdateRecord>,
    published: Vec<(SelectionRecord, ModelId)>,
}

impl LearnerState {
    pub fn new(
        id: LearnerId,
        data: LearnerSplit,
        tolerance: Tolerance,
        config: LearnerConfig,
        dag: Dag,
    ) -> Self {
        LearnerState {
            id,
            phase: Phase::Done,
            round: 0,
            data,
            tolerance,
            config,
            dag,
            roster: Vec::new(),
            selected: Vec::new(),
            own_updates: Vec::new(),
            peer_updates: Vec::new(),
            published: Vec::new(),
        }
    }

    pub fn id(&self) -> LearnerId {
        self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn data(&self) -> &LearnerSplit {
        &self.data
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tolerance
    }

    pub fn selected(&self) -> &[ModelId] {
        &self.selected
    }

    pub fn set_roster(&mut self, roster: Vec<LearnerId>) {
        self.roster = roster;
    }

    fn expect(&self, expected: Phase) -> Result<(), ProtocolError> {
        if self.phase != expected {
            return Err(ProtocolError::PhaseOrder {
                learner: self.id,
                expected,
                found: self.phase,
            });
        }
        Ok(())
    }

    fn peers(&self) -> usize {
        self.roster.iter().filter(|&&l| l != self.id).count()
    }

    /// Raw metric of a model on the local test split.
    pub fn evaluate(&self, params: &ParamVector) -> Result<f64, NnError> {
        match self.config.metric {
            MetricKind::Accuracy => {
                nn::evaluate_accuracy(&self.config.spec, params, &self.data.test)
            }
            MetricKind::Mse => nn::evaluate_mse(&self.config.spec, params, &self.data.test),
        }
    }

    /// Number of models every learner trains this round. All replicas share
    /// the same active set, so this is also the per-peer update count.
    fn models_per_learner(&self, active: usize) -> usize {
        match self.config.mode {
            Mode::Baseline => 1,
            Mode::Confederated => rules::models_to_train(active).min(active),
        }
    }

    pub fn begin_round(&mut self, round: u64) -> Result<(), ProtocolError> {
        self.expect(Phase::Done)?;
        self.round = round;
        self.selected.clear();
        self.own_updates.clear();
        self.peer_updates.clear();
        self.published.clear();
        self.phase = Phase::Select;
        Ok(())
    }

    /// Scores every active model and keeps the best ones.
    pub fn phase_select(&mut self) -> Result<Vec<ModelId>, ProtocolError> {
        self.expect(Phase::Select)?;
        let active = self.dag.active_models(self.round);
        if active.is_empty() {
            return Err(ProtocolError::NoActiveModels {
                learner: self.id,
                round: self.round,
            });
        }
        self.selected = match self.config.mode {
            Mode::Baseline if active.len() != 1 => {
                return Err(ProtocolError::BaselineFork {
                    learner: self.id,
                    found: active.len(),
                })
            }
            Mode::Baseline => active,
            Mode::Confederated => {
                let scored = active
                    .iter()
                    .map(|id| {
                        let node = self.dag.model(id)?;
                        let raw = self.evaluate(&node.params).map_err(|source| {
                            ProtocolError::Training {
                                learner: self.id,
                                source,
                            }
                        })?;
                        Ok(ScoredModel {
                            model_id: *id,
                            metric: rules::normalize_metric(raw, self.config.metric)?,
                            popularity: self.dag.popularity(id)?,
                        })
                    })
                    .collect::<Result<Vec<_>, ProtocolError>>()?;
                rules::select_best_models(&scored)?
            }
        };
        self.phase = Phase::Train;
        Ok(self.selected.clone())
    }

    fn train_seed(&self, model: &ModelId) -> u64 {
        let tag = u64::from_le_bytes(model.as_bytes()[..8].try_into().unwrap());
        seed::derive(self.config.seed, &[self.id as u64, self.round, tag])
    }

    /// Trains every selected model locally. Pure: touches no shared state, so
    /// learners may run this concurrently.
    pub fn train_selected(&self) -> Result<Vec<UpdateRecord>, ProtocolError> {
        self.expect(Phase::Train)?;
        let sample_count = self.data.sample_count() as u64;
        self.selected
            .iter()
            .map(|parent| {
                let start = &self.dag.model(parent)?.params;
                let cfg = TrainConfig {
                    epochs: self.config.epochs,
                    learning_rate: self.config.learning_rate,
                    batch_size: self.config.batch_size,
                    seed: self.train_seed(parent),
                };
                let params = nn::train(&self.config.spec, start, &self.data.train, &cfg).map_err(
                    |source| ProtocolError::Training {
                        learner: self.id,
                        source,
                    },
                )?;
                Ok(UpdateRecord::new(
                    self.id,
                    *parent,
                    self.round,
                    params,
                    sample_count,
                ))
            })
            .collect()
    }

    /// Records the learner's own updates and broadcasts them. All updates are
    /// encoded before any is sent.
    pub fn phase_share(
        &mut self,
        updates: Vec<UpdateRecord>,
        bus: &mut Bus,
    ) -> Result<(), ProtocolError> {
        self.expect(Phase::Train)?;
        self.phase = Phase::Share;
        let envelopes = updates
            .iter()
            .map(|u| {
                let params = match &self.config.model_store {
                    Some(dir) => ParamsPayload::store(&u.params, dir, &u.update_id.to_hex())?,
                    None => ParamsPayload::inline(&u.params),
                };
                Ok(Envelope::new(
                    self.id,
                    self.round,
                    Payload::Update(UpdatePayload::from_record(u, params)),
                ))
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        for u in &updates {
            self.dag.record_update(u.clone())?;
        }
        for e in envelopes {
            bus.broadcast(e)?;
        }
        self.own_updates = updates;
        self.phase = Phase::Aggregate;
        Ok(())
    }

    pub fn phase_train_and_share(
        &mut self,
        bus: &mut Bus,
    ) -> Result<Vec<UpdateRecord>, ProtocolError> {
        let updates = self.train_selected()?;
        self.phase_share(updates.clone(), bus)?;
        Ok(updates)
    }

    /// Waits for every peer's updates, filters them per parent and
    /// aggregates the accepted set into a child model.
    pub fn phase_aggregate(
        &mut self,
        bus: &mut Bus,
    ) -> Result<Vec<SelectionRecord>, ProtocolError> {
        self.expect(Phase::Aggregate)?;
        let active = self.dag.active_models(self.round).len();
        let expected = self.peers() * self.models_per_learner(active);
        let envelopes = bus.collect(self.id, MessageKind::Update, self.round, expected)?;
        for env in envelopes {
            let Payload::Update(payload) = env.payload else {
                continue;
            };
            let record = payload.to_record(self.config.model_store.as_deref())?;
            match self.dag.record_update(record.clone()) {
                Ok(_) => self.peer_updates.push(record),
                Err(DagError::UnknownParent(p)) => {
                    warn!(
                        "learner {}: ignoring update from {} on unknown parent {}",
                        self.id,
                        env.sender,
                        p.short()
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut selections = Vec::with_capacity(self.own_updates.len());
        for mine in &self.own_updates {
            let peers: Vec<UpdateRecord> = self
                .peer_updates
                .iter()
                .filter(|u| u.parent_model_id == mine.parent_model_id)
                .cloned()
                .collect();
            let chosen = match self.config.mode {
                Mode::Baseline => std::iter::once(mine.clone()).chain(peers).collect(),
                Mode::Confederated => rules::select_updates(mine, &peers, self.tolerance)?,
            };
            selections.push(SelectionRecord {
                learner_id: self.id,
                round: self.round,
                parent_model_id: mine.parent_model_id,
                chosen_update_ids: chosen.iter().map(|u| u.update_id).collect(),
            });
        }
        for s in &selections {
            let model = self.dag.materialize(s)?;
            self.published.push((s.clone(), model));
        }
        self.phase = Phase::Publish;
        Ok(selections)
    }

    /// Broadcasts this learner's selections, then materializes every peer
    /// selection so the local replica holds all children of the round.
    pub fn phase_publish(&mut self, bus: &mut Bus) -> Result<(), ProtocolError> {
        self.expect(Phase::Publish)?;
        for (s, _) in &self.published {
            bus.broadcast(Envelope::new(
                self.id,
                self.round,
                Payload::Selection(s.clone()),
            ))?;
        }
        Ok(())
    }

    /// Second half of the publish step, run after every learner has sent its
    /// selections: one selection arrives per peer update received.
    pub fn absorb_selections(&mut self, bus: &mut Bus) -> Result<RoundOutcome, ProtocolError> {
        self.expect(Phase::Publish)?;
        let active = self.dag.active_models(self.round).len();
        let expected = self.peers() * self.models_per_learner(active);
        for env in bus.collect(self.id, MessageKind::Selection, self.round, expected)? {
            let Payload::Selection(s) = env.payload else {
                continue;
            };
            match self.dag.materialize(&s) {
                Ok(_) => {}
                Err(DagError::UnknownParent(p)) => warn!(
                    "learner {}: ignoring selection from {} on unknown parent {}",
                    self.id,
                    env.sender,
                    p.short()
                ),
                Err(e) => return Err(e.into()),
            }
        }
        let models = self
            .published
            .iter()
            .map(|(s, model)| {
                let params = &self.dag.model(model)?.params;
                let metric = self
                    .evaluate(params)
                    .map_err(|source| ProtocolError::Training {
                        learner: self.id,
                        source,
                    })?;
                Ok(TrainedModel {
                    parent: s.parent_model_id,
                    model: *model,
                    metric,
                })
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        self.phase = Phase::Done;
        Ok(RoundOutcome {
            round: self.round,
            learner: self.id,
            updates_sent: self.own_updates.len(),
            selections_sent: self.published.len(),
            models,
        })
    }
}
