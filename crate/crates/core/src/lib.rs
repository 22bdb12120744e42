//! Decentralized federated learning where learners pick which models to
//! train and which peer updates to accept, so the model history forms a DAG
//! that forks when groups of learners disagree.

pub mod dag;
pub mod data;
pub mod digest;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod params;
pub mod protocol;
pub mod rules;
pub mod seed;
pub mod transport;

pub use dag::{Dag, LearnerId, ModelId, ModelNode, SelectionRecord, UpdateId, UpdateRecord};
pub use digest::Digest;
pub use harness::{run_experiment, ExperimentConfig, MetricsRow};
pub use matrix::Matrix;
pub use nn::{Head, NetSpec, TrainConfig};
pub use params::{ParamVector, ParamsPayload};
pub use protocol::{Mode, Network, RoundOutcome};
pub use rules::{MetricKind, Tolerance};
