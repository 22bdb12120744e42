use std::fmt::Write;

use super::Dag;

/// Graphviz rendering. One node per model, labelled with its short id, round
/// and popularity; one edge per aggregated update from parent to child,
/// labelled with the submitting learner. Output order is fixed: models by
/// (round, id), edges by learner.
pub fn export_dot(dag: &Dag) -> String {
    let mut models: Vec<_> = dag.models().collect();
    models.sort_by_key(|m| (m.created_round, m.model_id));
    let mut out = String::from("digraph models {\n  rankdir=LR;\n  node [shape=box];\n");
    for m in &models {
        let popularity = dag.popularity(&m.model_id).unwrap_or(0);
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}\\nround {}\\npopularity {}\"];",
            m.model_id,
            m.model_id.short(),
            m.created_round,
            popularity
        );
    }
    for m in &models {
        let Some(parent) = m.parent_id else { continue };
        let mut learners: Vec<_> = m
            .aggregated_update_ids
            .iter()
            .filter_map(|u| dag.update(u).ok())
            .map(|u| u.learner_id)
            .collect();
        learners.sort();
        for l in learners {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"learner {}\"];",
                parent, m.model_id, l
            );
        }
    }
    out.push_str("}\n");
    out
}
