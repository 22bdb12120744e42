use rayon::prelude::*;

use super::{LearnerConfig, LearnerState, ProtocolError, RoundOutcome};
use crate::dag::{Dag, LearnerId};
use crate::data::LearnerSplit;
use crate::nn;
use crate::params::ParamVector;
use crate::rules::Tolerance;
use crate::seed;
use crate::transport::{Bus, Envelope};

const GENESIS_STREAM: u64 = 0x0067_656e_6573_6973;

/// Initial parameters every replica starts from.
pub fn genesis_params(config: &LearnerConfig) -> ParamVector {
    nn::init_params(&config.spec, seed::derive(config.seed, &[GENESIS_STREAM]))
}

/// Every learner plus the bus that connects them. Phases run with a global
/// barrier between them; within a phase, bus traffic is issued in learner-id
/// order so any schedule yields the same log.
pub struct Network {
    learners: Vec<LearnerState>,
    bus: Bus,
    round: u64,
}

impl Network {
    /// Joins every learner to a fresh bus. Learners are kept sorted by id.
    pub fn new(mut learners: Vec<LearnerState>) -> Result<Self, ProtocolError> {
        learners.sort_by_key(|l| l.id());
        let mut bus = Bus::new();
        for l in &learners {
            bus.join(l.id())?;
        }
        let roster = bus.roster();
        for l in &mut learners {
            l.set_roster(roster.clone());
        }
        Ok(Network {
            learners,
            bus,
            round: 0,
        })
    }

    /// One learner per split, learner id = split index. Every replica starts
    /// from the same genesis model.
    pub fn from_splits(
        splits: Vec<LearnerSplit>,
        tolerances: &[Tolerance],
        config: &LearnerConfig,
    ) -> Result<Self, ProtocolError> {
        assert_eq!(splits.len(), tolerances.len(), "one tolerance per learner");
        let genesis = genesis_params(config);
        let learners = splits
            .into_iter()
            .zip(tolerances)
            .map(|(split, &tol)| {
                let mut dag = Dag::new();
                dag.insert_genesis(genesis.clone(), config.spec.digest())?;
                Ok(LearnerState::new(
                    split.learner as LearnerId,
                    split,
                    tol,
                    config.clone(),
                    dag,
                ))
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        Self::new(learners)
    }

    pub fn learners(&self) -> &[LearnerState] {
        &self.learners
    }

    /// Direct access for stepping phases by hand.
    pub fn learners_mut(&mut self) -> &mut [LearnerState] {
        &mut self.learners
    }

    pub fn learner(&self, id: LearnerId) -> Option<&LearnerState> {
        self.learners.iter().find(|l| l.id() == id)
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn log(&self) -> &[Envelope] {
        self.bus.log()
    }

    /// Last completed round.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Replica of the lowest-id learner. All replicas agree after a round.
    pub fn dag(&self) -> &Dag {
        self.learners[0].dag()
    }

    /// Runs the next round and returns outcomes in learner-id order.
    pub fn run_round(&mut self) -> Result<Vec<RoundOutcome>, ProtocolError> {
        let round = self.round + 1;

        // Select: evaluation only touches the learner's own replica.
        self.learners.par_iter_mut().try_for_each(|l| {
            l.begin_round(round)?;
            l.phase_select().map(drop)
        })?;

        // Train concurrently, then share in id order.
        let updates = self
            .learners
            .par_iter()
            .map(|l| l.train_selected())
            .collect::<Result<Vec<_>, _>>()?;
        for (l, u) in self.learners.iter_mut().zip(updates) {
            l.phase_share(u, &mut self.bus)?;
        }

        for l in &mut self.learners {
            l.phase_aggregate(&mut self.bus)?;
        }
        for l in &mut self.learners {
            l.phase_publish(&mut self.bus)?;
        }
        let outcomes = self
            .learners
            .iter_mut()
            .map(|l| l.absorb_selections(&mut self.bus))
            .collect::<Result<Vec<_>, _>>()?;
        self.round = round;
        Ok(outcomes)
    }
}
