use std::fmt::Write;

use super::config::ExperimentConfig;
use super::metrics::{summarize, MetricsRow};
use super::HarnessError;
use crate::data::{class_histogram, write_histogram_csv};

/// Per-round min/avg/max of the learners' local metric, the final round and
/// the active-model trajectory.
pub fn report(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return "no rows\n".to_string();
    };
    let summaries = summarize(rows);
    writeln!(out, "metric: {}", first.metric_kind.as_str()).unwrap();
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>10} {:>6} {:>5}",
        "round", "min", "avg", "max", "active", "forks"
    )
    .unwrap();
    for s in &summaries {
        writeln!(
            out,
            "{:>5} {:>10.6} {:>10.6} {:>10.6} {:>6} {:>5}",
            s.round, s.min, s.mean, s.max, s.active_model_count, s.fork_count
        )
        .unwrap();
    }
    let last = summaries.last().unwrap();
    writeln!(
        out,
        "final round {}: min {:.6} avg {:.6} max {:.6}, {} active models",
        last.round, last.min, last.mean, last.max, last.active_model_count
    )
    .unwrap();
    let trajectory: Vec<String> = summaries
        .iter()
        .map(|s| s.active_model_count.to_string())
        .collect();
    writeln!(out, "active models per round: {}", trajectory.join(" ")).unwrap();
    writeln!(
        out,
        "cumulative forks: {}",
        summaries.iter().map(|s| s.fork_count).sum::<usize>()
    )
    .unwrap();
    out
}

/// Learner-by-class histogram of the configured partition, as CSV.
pub fn preview_partition<W: std::io::Write>(
    config: &ExperimentConfig,
    mut out: W,
) -> Result<(), HarnessError> {
    let (sources, splits) = config.splits()?;
    write_histogram_csv(&class_histogram(&sources, &splits), &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::rules::MetricKind;

    #[test]
    fn report_lists_rounds_and_trajectory() {
        let rows: Vec<MetricsRow> = (1..=3)
            .flat_map(|round| {
                (0..2).map(move |l| MetricsRow {
                    round,
                    learner_id: l,
                    model_id: Digest::ZERO,
                    metric_kind: MetricKind::Accuracy,
                    value: 0.9,
                    models_trained: 1,
                    active_model_count: 4 - round as usize,
                    fork_count_this_round: 0,
                })
            })
            .collect();
        let text = report(&rows);
        assert!(
            text.contains("final round 3: min 0.900000 avg 0.900000 max 0.900000, 1 active models")
        );
        assert!(text.contains("active models per round: 3 2 1"));
    }
}
