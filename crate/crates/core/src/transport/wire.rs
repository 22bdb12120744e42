//! One message per line:
//!
//! ```text
//! {"kind":"update","sender":3,"round":1,"digest":"<sha256 hex>","payload":{...}}
//! ```
//!
//! The digest is the SHA-256 of the payload's compact JSON serialization with
//! fields in declaration order. Parameters travel as hex of their canonical
//! bytes, or as a path into a shared model store.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::dag::{LearnerId, ModelId, SelectionRecord, UpdateId, UpdateRecord};
use crate::digest::Digest;
use crate::params::ParamsPayload;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Join,
    Update,
    Selection,
    /// Reserved; barriers are currently implied by message counts.
    Barrier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinPayload {
    pub learner_id: LearnerId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdatePayload {
    pub update_id: UpdateId,
    pub learner_id: LearnerId,
    pub parent_model_id: ModelId,
    pub round: u64,
    pub sample_count: u64,
    pub params: ParamsPayload,
}

impl UpdatePayload {
    pub fn from_record(u: &UpdateRecord, params: ParamsPayload) -> Self {
        UpdatePayload {
            update_id: u.update_id,
            learner_id: u.learner_id,
            parent_model_id: u.parent_model_id,
            round: u.round,
            sample_count: u.sample_count,
            params,
        }
    }

    /// Decodes the parameters and checks the update id against its content.
    pub fn to_record(&self, store: Option<&Path>) -> Result<UpdateRecord, TransportError> {
        let record = UpdateRecord {
            update_id: self.update_id,
            learner_id: self.learner_id,
            parent_model_id: self.parent_model_id,
            round: self.round,
            params: self.params.resolve(store)?,
            sample_count: self.sample_count,
        };
        record
            .verify()
            .map_err(|e| TransportError::Integrity(e.to_string()))?;
        Ok(record)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierPayload {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Join(JoinPayload),
    Update(UpdatePayload),
    Selection(SelectionRecord),
    Barrier(BarrierPayload),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Join(_) => MessageKind::Join,
            Payload::Update(_) => MessageKind::Update,
            Payload::Selection(_) => MessageKind::Selection,
            Payload::Barrier(_) => MessageKind::Barrier,
        }
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("payload serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Envelope {
    pub kind: MessageKind,
    pub sender: LearnerId,
    pub round: u64,
    pub digest: Digest,
    pub payload: Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvelope {
    kind: MessageKind,
    sender: LearnerId,
    round: u64,
    digest: Digest,
    payload: serde_json::Value,
}

impl Envelope {
    pub fn new(sender: LearnerId, round: u64, payload: Payload) -> Self {
        Envelope {
            kind: payload.kind(),
            sender,
            round,
            digest: payload.digest(),
            payload,
        }
    }

    pub fn verify(&self) -> Result<(), TransportError> {
        if self.kind != self.payload.kind() {
            return Err(TransportError::Integrity(format!(
                "kind {:?} does not match payload",
                self.kind
            )));
        }
        let actual = self.payload.digest();
        if actual != self.digest {
            return Err(TransportError::DigestMismatch {
                stated: self.digest,
                actual,
            });
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    /// Parses and verifies one wire line (without its trailing newline).
    pub fn parse_line(line: &str) -> Result<Self, TransportError> {
        let raw: RawEnvelope =
            serde_json::from_str(line).map_err(|e| TransportError::Malformed(e.to_string()))?;
        let malformed = |e: serde_json::Error| TransportError::Malformed(e.to_string());
        let payload = match raw.kind {
            MessageKind::Join => {
                Payload::Join(serde_json::from_value(raw.payload).map_err(malformed)?)
            }
            MessageKind::Update => {
                Payload::Update(serde_json::from_value(raw.payload).map_err(malformed)?)
            }
            MessageKind::Selection => {
                Payload::Selection(serde_json::from_value(raw.payload).map_err(malformed)?)
            }
            MessageKind::Barrier => {
                Payload::Barrier(serde_json::from_value(raw.payload).map_err(malformed)?)
            }
        };
        let env = Envelope {
            kind: raw.kind,
            sender: raw.sender,
            round: raw.round,
            digest: raw.digest,
            payload,
        };
        env.verify()?;
        Ok(env)
    }
}
