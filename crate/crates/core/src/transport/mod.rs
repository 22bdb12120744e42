//! Broadcast messaging between learners.
//!
//! [`Bus`] is the in-process simulation of a reliable broadcast channel:
//! every message reaches every other roster member exactly once, and each
//! receiver drains messages in `(sender, sequence)` order, so the outcome
//! does not depend on how learners were scheduled.

mod log;
mod wire;

use std::collections::{BTreeMap, BTreeSet};

use crate::dag::LearnerId;
use crate::digest::Digest;
use crate::params::ParamError;

pub use self::log::{read_log, replay, write_log};
pub use wire::{BarrierPayload, Envelope, JoinPayload, MessageKind, Payload, UpdatePayload};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TransportError {
    #[error("learner {0} already joined")]
    DuplicateLearner(LearnerId),
    #[error("learner {0} is not on the roster")]
    UnknownLearner(LearnerId),
    #[error("payload digest mismatch: stated {stated}, actual {actual}")]
    DigestMismatch { stated: Digest, actual: Digest },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(
        "learner {learner} expected {expected} {kind:?} messages for round {round}, found {found}"
    )]
    Incomplete {
        learner: LearnerId,
        kind: MessageKind,
        round: u64,
        expected: usize,
        found: usize,
    },
    #[error("message log: {0}")]
    Log(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Clone, Debug)]
struct Delivery {
    seq: u64,
    envelope: Envelope,
}

#[derive(Debug, Default)]
pub struct Bus {
    roster: BTreeSet<LearnerId>,
    inboxes: BTreeMap<LearnerId, Vec<Delivery>>,
    next_seq: BTreeMap<LearnerId, u64>,
    log: Vec<Envelope>,
    /// Point-to-point deliveries keyed by (round, sender, kind).
    deliveries: BTreeMap<(u64, LearnerId, MessageKind), usize>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a learner and announces it. Returns the roster after the join.
    pub fn join(&mut self, learner: LearnerId) -> Result<Vec<LearnerId>, TransportError> {
        if !self.roster.insert(learner) {
            return Err(TransportError::DuplicateLearner(learner));
        }
        self.inboxes.entry(learner).or_default();
        self.log.push(Envelope::new(
            learner,
            0,
            Payload::Join(JoinPayload {
                learner_id: learner,
            }),
        ));
        Ok(self.roster())
    }

    pub fn roster(&self) -> Vec<LearnerId> {
        self.roster.iter().copied().collect()
    }

    /// Queues the envelope for every roster member except the sender.
    pub fn broadcast(&mut self, envelope: Envelope) -> Result<(), TransportError> {
        let sender = envelope.sender;
        if !self.roster.contains(&sender) {
            return Err(TransportError::UnknownLearner(sender));
        }
        let seq = self.next_seq.entry(sender).or_default();
        let this = *seq;
        *seq += 1;
        let mut delivered = 0;
        for (&member, inbox) in self.inboxes.iter_mut() {
            if member != sender {
                inbox.push(Delivery {
                    seq: this,
                    envelope: envelope.clone(),
                });
                delivered += 1;
            }
        }
        *self
            .deliveries
            .entry((envelope.round, sender, envelope.kind))
            .or_default() += delivered;
        self.log.push(envelope);
        Ok(())
    }

    /// Removes and returns `expected` messages of `kind` for `round` from the
    /// learner's inbox, ordered by sender then send order. Other messages stay
    /// buffered. Fails if fewer are available or any fails its digest check.
    pub fn collect(
        &mut self,
        learner: LearnerId,
        kind: MessageKind,
        round: u64,
        expected: usize,
    ) -> Result<Vec<Envelope>, TransportError> {
        let inbox = self
            .inboxes
            .get_mut(&learner)
            .ok_or(TransportError::UnknownLearner(learner))?;
        if expected == 0 {
            return Ok(Vec::new());
        }
        let mut matching: Vec<(LearnerId, u64, usize)> = inbox
            .iter()
            .enumerate()
            .filter(|(_, d)| d.envelope.kind == kind && d.envelope.round == round)
            .map(|(i, d)| (d.envelope.sender, d.seq, i))
            .collect();
        if matching.len() < expected {
            return Err(TransportError::Incomplete {
                learner,
                kind,
                round,
                expected,
                found: matching.len(),
            });
        }
        matching.sort();
        matching.truncate(expected);
        let mut take: Vec<usize> = matching.iter().map(|m| m.2).collect();
        let order: Vec<usize> = take.clone();
        take.sort_unstable();
        let mut removed: BTreeMap<usize, Envelope> = BTreeMap::new();
        for &i in take.iter().rev() {
            removed.insert(i, inbox.remove(i).envelope);
        }
        let out: Vec<Envelope> = order.iter().map(|i| removed.remove(i).unwrap()).collect();
        for e in &out {
            e.verify()?;
        }
        Ok(out)
    }

    /// Messages waiting in a learner's inbox.
    pub fn pending(&self, learner: LearnerId) -> usize {
        self.inboxes.get(&learner).map_or(0, Vec::len)
    }

    /// Copies of `kind` messages from `sender` queued for peers in `round`.
    pub fn deliveries(&self, round: u64, sender: LearnerId, kind: MessageKind) -> usize {
        self.deliveries
            .get(&(round, sender, kind))
            .copied()
            .unwrap_or(0)
    }

    /// Every message sent so far, in send order.
    pub fn log(&self) -> &[Envelope] {
        &self.log
    }
}
