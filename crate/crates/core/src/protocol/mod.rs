//! The per-learner round protocol and a synchronous network runner.
//!
//! Each round runs three steps, separated by global barriers:
//!
//! 1. **Select**: score every active model on the local test split and keep
//!    the best `floor(sqrt(n))`.
//! 2. **Train/share**: train each selected model on the local train split and
//!    broadcast one update per model.
//! 3. **Aggregate/publish**: per parent, filter peer updates by weight
//!    divergence, aggregate the accepted set, broadcast the selection, then
//!    replay every peer's selection so all replicas agree.

mod learner;
mod network;

pub use learner::{LearnerConfig, LearnerState, Mode, Phase, RoundOutcome, TrainedModel};
pub use network::{genesis_params, Network};

#[cfg(test)]
mod tests;

use crate::dag::{DagError, LearnerId};
use crate::nn::NnError;
use crate::rules::RuleError;
use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("learner {learner}: expected phase {expected:?}, found {found:?}")]
    PhaseOrder {
        learner: LearnerId,
        expected: Phase,
        found: Phase,
    },
    #[error("learner {learner}: no active models in round {round}")]
    NoActiveModels { learner: LearnerId, round: u64 },
    #[error("learner {learner}: baseline mode expects one active model, found {found}")]
    BaselineFork { learner: LearnerId, found: usize },
    #[error("learner {learner}: {source}")]
    Training {
        learner: LearnerId,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
