//! Recording and replaying the full message history of a run.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{Envelope, Payload, TransportError};
use crate::dag::Dag;
use crate::digest::Digest;
use crate::params::ParamVector;

pub fn write_log<W: Write>(envelopes: &[Envelope], mut out: W) -> std::io::Result<()> {
    for e in envelopes {
        out.write_all(e.to_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<Envelope>, TransportError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TransportError::Log(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let env = Envelope::parse_line(&line)
            .map_err(|e| TransportError::Log(format!("line {}: {e}", n + 1)))?;
        out.push(env);
    }
    Ok(out)
}

/// Rebuilds the model DAG from a message log alone, starting from the shared
/// genesis model. Updates are recorded and selections materialized in log
/// order.
pub fn replay(
    envelopes: &[Envelope],
    genesis: ParamVector,
    spec_digest: Digest,
    store: Option<&Path>,
) -> Result<Dag, TransportError> {
    let mut dag = Dag::new();
    dag.insert_genesis(genesis, spec_digest)
        .map_err(|e| TransportError::Log(e.to_string()))?;
    for env in envelopes {
        env.verify()?;
        let result = match &env.payload {
            Payload::Update(u) => dag.record_update(u.to_record(store)?).map(|_| ()),
            Payload::Selection(s) => dag.materialize(s).map(|_| ()),
            Payload::Join(_) | Payload::Barrier(_) => Ok(()),
        };
        result.map_err(|e| TransportError::Log(format!("round {}: {e}", env.round)))?;
    }
    Ok(dag)
}
