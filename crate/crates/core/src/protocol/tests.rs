use super::*;
use crate::dag::write_snapshot;
use crate::data::{
    partition, BlobParams, Dataset, LearnerSplit, PartitionKind, PartitionSpec, DEFAULT_FRACTIONS,
};
use crate::nn::NetSpec;
use crate::rules::{MetricKind, Tolerance};
use crate::transport::MessageKind;

fn config(mode: Mode) -> LearnerConfig {
    LearnerConfig {
        spec: NetSpec::classifier(vec![4, 8, 3]).unwrap(),
        metric: MetricKind::Accuracy,
        epochs: 2,
        learning_rate: 0.5,
        batch_size: 8,
        seed: 7,
        mode,
        model_store: None,
    }
}

fn iid_splits(k: usize) -> Vec<LearnerSplit> {
    let blobs = BlobParams {
        classes: 3,
        samples_per_class: 20 * k,
        dim: 4,
        spread: 0.08,
        seed: 3,
    }
    .generate();
    let spec = PartitionSpec {
        kind: PartitionKind::Iid,
        learner_count: k,
        seed: 11,
        fractions: DEFAULT_FRACTIONS,
    };
    partition(&[blobs], &spec).unwrap()
}

fn relabel(d: &Dataset) -> Dataset {
    let labels = d.labels().unwrap().iter().map(|l| (l + 1) % 3).collect();
    Dataset::new(d.features().clone(), Some(labels), d.class_count()).unwrap()
}

fn network(k: usize, tol: f64, mode: Mode) -> Network {
    Network::from_splits(
        iid_splits(k),
        &vec![Tolerance::new(tol).unwrap(); k],
        &config(mode),
    )
    .unwrap()
}

fn snapshot(dag: &crate::dag::Dag) -> Vec<u8> {
    let mut out = Vec::new();
    write_snapshot(dag, &mut out).unwrap();
    out
}

#[test]
fn first_round_selects_genesis() {
    let mut net = network(3, 3.0, Mode::Confederated);
    let genesis = net.dag().genesis().unwrap();
    let l = &mut net.learners_mut()[0];
    l.begin_round(1).unwrap();
    assert_eq!(l.phase_select().unwrap(), vec![genesis]);
    assert_eq!(l.phase(), Phase::Train);
}

#[test]
fn phases_out_of_order_are_rejected() {
    let mut net = network(2, 3.0, Mode::Confederated);
    let l = &mut net.learners_mut()[0];
    assert!(matches!(
        l.phase_select(),
        Err(ProtocolError::PhaseOrder { .. })
    ));
    l.begin_round(1).unwrap();
    assert!(matches!(
        l.train_selected(),
        Err(ProtocolError::PhaseOrder { .. })
    ));
    assert!(matches!(
        l.begin_round(1),
        Err(ProtocolError::PhaseOrder { .. })
    ));
}

#[test]
fn trained_update_moves_away_from_parent() {
    let mut net = network(2, 3.0, Mode::Confederated);
    let l = &mut net.learners_mut()[0];
    l.begin_round(1).unwrap();
    let parent = l.phase_select().unwrap()[0];
    let updates = l.train_selected().unwrap();
    assert_eq!(updates.len(), 1);
    assert_ne!(updates[0].params, l.dag().model(&parent).unwrap().params);
    assert_eq!(updates[0].sample_count, l.data().train.len() as u64);
}

#[test]
fn message_accounting_matches_models_trained() {
    let k = 5;
    let mut net = network(k, 2.0, Mode::Confederated);
    for _ in 0..4 {
        let outcomes = net.run_round().unwrap();
        let round = net.round();
        let count = |kind| {
            net.log()
                .iter()
                .filter(|e| e.kind == kind && e.round == round)
                .count()
        };
        let trained: usize = outcomes.iter().map(|o| o.models_trained()).sum();
        assert_eq!(count(MessageKind::Update), trained);
        assert_eq!(count(MessageKind::Selection), trained);
        for o in &outcomes {
            assert_eq!(o.updates_sent, o.models_trained());
            assert_eq!(o.selections_sent, o.models_trained());
        }
        for l in net.learners() {
            assert_eq!(net.bus().pending(l.id()), 0);
        }
    }
}

#[test]
fn replicas_agree_after_every_round() {
    let mut net = network(6, 1.0, Mode::Confederated);
    for _ in 0..4 {
        net.run_round().unwrap();
        let reference = snapshot(net.dag());
        for l in net.learners() {
            assert_eq!(snapshot(l.dag()), reference, "learner {}", l.id());
        }
    }
}

#[test]
fn full_runs_are_deterministic() {
    let run = || {
        let mut net = network(4, 1.5, Mode::Confederated);
        let outcomes: Vec<_> = (0..3).map(|_| net.run_round().unwrap()).collect();
        let log: Vec<String> = net.log().iter().map(|e| e.to_line()).collect();
        (outcomes, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn iid_high_tolerance_yields_single_child() {
    let k = 8;
    let mut net = network(k, 3.0, Mode::Confederated);
    net.run_round().unwrap();
    let dag = net.dag();
    let children = dag.active_models(2);
    assert_eq!(children.len(), 1);
    assert_eq!(dag.popularity(&children[0]).unwrap(), k);
    assert_eq!(dag.fork_count(1), 0);
}

#[test]
fn own_update_is_always_selected() {
    let mut net = network(6, 1.0, Mode::Confederated);
    for _ in 0..3 {
        net.run_round().unwrap();
    }
    let dag = net.dag();
    for (s, _) in dag.selections() {
        let owners: Vec<_> = s
            .chosen_update_ids
            .iter()
            .map(|id| dag.update(id).unwrap().learner_id)
            .collect();
        assert_eq!(owners[0], s.learner_id);
    }
    // every learner's update lands in some model each round
    for round in 1..=3 {
        for l in net.learners() {
            assert!(dag
                .updates()
                .filter(|u| u.round == round && u.learner_id == l.id())
                .all(|u| dag
                    .selections()
                    .any(|(s, _)| s.chosen_update_ids.contains(&u.update_id))));
        }
    }
}

#[test]
fn divergent_learner_is_forked_off() {
    let mut splits = iid_splits(4);
    let odd = &mut splits[3];
    odd.train = relabel(&odd.train);
    odd.test = relabel(&odd.test);
    let tol = vec![Tolerance::new(1.0).unwrap(); 4];
    let mut cfg = config(Mode::Confederated);
    cfg.epochs = 5;
    let mut net = Network::from_splits(splits, &tol, &cfg).unwrap();
    net.run_round().unwrap();
    let dag = net.dag();
    assert!(dag.fork_count(1) >= 1);
    let odd_update = dag.updates().find(|u| u.learner_id == 3).unwrap().update_id;
    for (s, _) in dag.selections().filter(|(s, _)| s.learner_id != 3) {
        assert!(
            !s.chosen_update_ids.contains(&odd_update),
            "learner {}",
            s.learner_id
        );
    }
}

#[test]
fn baseline_never_forks() {
    let mut net = network(5, 0.5, Mode::Baseline);
    for round in 1..=3 {
        let outcomes = net.run_round().unwrap();
        assert!(outcomes.iter().all(|o| o.models_trained() == 1));
        assert_eq!(net.dag().active_models(round + 1).len(), 1);
        assert_eq!(net.dag().fork_count(round), 0);
    }
}

#[test]
fn by_reference_transport_matches_inline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Confederated);
    let tol = vec![Tolerance::new(2.0).unwrap(); 3];
    let mut inline = Network::from_splits(iid_splits(3), &tol, &cfg).unwrap();
    cfg.model_store = Some(dir.path().to_path_buf());
    let mut by_ref = Network::from_splits(iid_splits(3), &tol, &cfg).unwrap();
    for _ in 0..2 {
        inline.run_round().unwrap();
        by_ref.run_round().unwrap();
    }
    assert_eq!(snapshot(inline.dag()), snapshot(by_ref.dag()));
    assert!(std::fs::read_dir(dir.path()).unwrap().count() > 0);
}
