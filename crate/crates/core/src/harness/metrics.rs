use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::dag::{LearnerId, ModelId};
use crate::rules::MetricKind;

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "learner_id",
    "model_id",
    "metric_kind",
    "value",
    "models_trained",
    "active_model_count",
    "fork_count_this_round",
];

/// One row per (round, learner, trained model).
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub learner_id: LearnerId,
    /// The aggregated child the learner produced for this parent.
    pub model_id: ModelId,
    pub metric_kind: MetricKind,
    /// Raw metric on the learner's test split, without fine-tuning.
    pub value: f64,
    pub models_trained: usize,
    /// Models created this round, i.e. the candidates of the next round.
    pub active_model_count: usize,
    pub fork_count_this_round: usize,
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.learner_id.to_string(),
            r.model_id.to_hex(),
            r.metric_kind.as_str().to_string(),
            format!("{:.16e}", r.value),
            r.models_trained.to_string(),
            r.active_model_count.to_string(),
            r.fork_count_this_round.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!(
                "unexpected header: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        )));
    }
    r.deserialize().collect()
}

/// Each learner's local value in a round: its best model by the metric's
/// ordering.
pub fn local_values(rows: &[MetricsRow], round: u64) -> BTreeMap<LearnerId, f64> {
    let mut best: BTreeMap<LearnerId, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.round == round) {
        best.entry(r.learner_id)
            .and_modify(|v| {
                if r.metric_kind.better(r.value, *v) {
                    *v = r.value;
                }
            })
            .or_insert(r.value);
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub active_model_count: usize,
    pub fork_count: usize,
}

impl RoundSummary {
    pub fn gap(&self) -> f64 {
        self.max - self.min
    }
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<RoundSummary> {
    let mut rounds: Vec<u64> = rows.iter().map(|r| r.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    rounds
        .into_iter()
        .map(|round| {
            let values: Vec<f64> = local_values(rows, round).into_values().collect();
            let first = rows.iter().find(|r| r.round == round).unwrap();
            RoundSummary {
                round,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                active_model_count: first.active_model_count,
                fork_count: first.fork_count_this_round,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;

    fn row(round: u64, learner: LearnerId, value: f64) -> MetricsRow {
        MetricsRow {
            round,
            learner_id: learner,
            model_id: Digest::of(&[learner as u8]),
            metric_kind: MetricKind::Accuracy,
            value,
            models_trained: 1,
            active_model_count: 2,
            fork_count_this_round: 1,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            row(1, 0, 0.1),
            row(1, 1, 1.0 / 3.0),
            row(2, 0, f64::MIN_POSITIVE),
        ];
        let mut buf = Vec::new();
        write_metrics(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "round,learner_id,model_id,metric_kind,value,models_trained,active_model_count,fork_count_this_round\n"
        ));
        assert!(
            text.contains(",accuracy,3.3333333333333331e-1,1,2,1\n"),
            "{text}"
        );
        assert_eq!(read_metrics(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_metrics(&b"a,b\n1,2\n"[..]).is_err());
    }

    #[test]
    fn constant_metric_summary() {
        let rows: Vec<_> = (0..4).map(|l| row(1, l, 0.9)).collect();
        let s = &summarize(&rows)[0];
        assert_eq!((s.min, s.max), (0.9, 0.9));
        assert!((s.mean - 0.9).abs() < 1e-15);
    }

    #[test]
    fn local_value_takes_best_model() {
        let mut rows = vec![row(1, 0, 0.5), row(1, 0, 0.7), row(1, 1, 0.2)];
        assert_eq!(local_values(&rows, 1)[&0], 0.7);
        for r in &mut rows {
            r.metric_kind = MetricKind::Mse;
        }
        assert_eq!(local_values(&rows, 1)[&0], 0.5);
        let s = &summarize(&rows)[0];
        assert_eq!((s.min, s.max), (0.2, 0.5));
    }
}
