mod common;

use colier_core::document::{ChangeMessage, DocAction, SequencedEvent, SessionDocument};
use colier_core::history::VersionLog;
use colier_core::reducer::{apply_change, RejectReason};
use proptest::prelude::*;

use common::change;

/// Sequencer stand-in: stamps ids, applies, and logs accepted changes.
fn run(changes: &[ChangeMessage]) -> (SessionDocument, VersionLog, Vec<Option<RejectReason>>) {
    let initial = SessionDocument::new("p", 64, 48, 0);
    let mut doc = initial.clone();
    let mut log = VersionLog::new();
    let mut outcomes = Vec::new();
    for c in changes {
        let seq = log.head() + 1;
        let mut c = c.clone();
        c.action.assign_ids(seq);
        match apply_change(&doc, &c) {
            Ok((next, _)) => {
                doc = next;
                log.append(SequencedEvent { seq, server_time: seq as i64, change: c }, &doc).unwrap();
                outcomes.push(None);
            }
            Err(r) => outcomes.push(Some(r)),
        }
    }
    (doc, log, outcomes)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn replay_equals_fold(changes in prop::collection::vec(change(), 0..120)) {
        let (live, log, _) = run(&changes);
        let initial = SessionDocument::new("p", 64, 48, 0);
        let replayed = log.replay(&initial, log.head()).unwrap();
        prop_assert_eq!(replayed.canonical_bytes(), live.canonical_bytes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn every_prefix_replays(changes in prop::collection::vec(change(), 0..60)) {
        let initial = SessionDocument::new("p", 64, 48, 0);
        let (_, log, _) = run(&changes);
        for k in 0..=log.head() {
            let accepted: Vec<_> = log.entries()[..k as usize].to_vec();
            let (_, head) = VersionLog::rebuild(&initial, accepted).unwrap();
            prop_assert_eq!(log.replay(&initial, k).unwrap().canonical_bytes(), head.canonical_bytes());
        }
    }

    #[test]
    fn reducer_is_deterministic_and_rejections_are_no_ops(
        prefix in prop::collection::vec(change(), 0..40),
        next in change(),
    ) {
        let (doc, log, _) = run(&prefix);
        let before = doc.canonical_bytes();
        let mut next = next;
        next.action.assign_ids(log.head() + 1);
        let a = apply_change(&doc, &next);
        let b = apply_change(&doc, &next);
        match (&a, &b) {
            (Ok((da, ea)), Ok((db, eb))) => {
                prop_assert_eq!(da.canonical_bytes(), db.canonical_bytes());
                prop_assert_eq!(ea, eb);
            }
            (Err(ra), Err(rb)) => prop_assert_eq!(ra, rb),
            _ => prop_assert!(false, "outcomes differ"),
        }
        prop_assert_eq!(doc.canonical_bytes(), before);
    }

    #[test]
    fn lock_soundness(changes in prop::collection::vec(change(), 0..80)) {
        let initial = SessionDocument::new("p", 64, 48, 0);
        let (_, log, _) = run(&changes);
        let mut doc = initial;
        for e in log.entries() {
            let c = &e.change;
            if let Some(layer) = c.action.target_layer().and_then(|id| doc.layer(id)) {
                if let Some(owner) = layer.exclusive_owner() {
                    prop_assert!(
                        owner == &c.client_id || matches!(c.action, DocAction::ExclusiveUnlock { .. }),
                        "seq {} mutated a layer locked by {}", e.seq, owner
                    );
                }
            }
            doc = apply_change(&doc, c).unwrap().0;
        }
    }

    #[test]
    fn reorder_preserves_layer_set(changes in prop::collection::vec(change(), 0..80)) {
        let initial = SessionDocument::new("p", 64, 48, 0);
        let (_, log, _) = run(&changes);
        let mut doc = initial;
        for e in log.entries() {
            let next = apply_change(&doc, &e.change).unwrap().0;
            if matches!(e.change.action, DocAction::ReorderLayer { .. }) {
                let mut a: Vec<_> = doc.layers.iter().map(|l| l.id.clone()).collect();
                let mut b: Vec<_> = next.layers.iter().map(|l| l.id.clone()).collect();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
            doc = next;
        }
    }

    #[test]
    fn undo_locality(changes in prop::collection::vec(change(), 0..80)) {
        let initial = SessionDocument::new("p", 64, 48, 0);
        let (_, log, _) = run(&changes);
        let mut doc = initial;
        for e in log.entries() {
            let next = apply_change(&doc, &e.change).unwrap().0;
            if matches!(e.change.action, DocAction::UndoPath { .. } | DocAction::RedoPath { .. }) {
                for (before, after) in doc.layers.iter().zip(&next.layers) {
                    for (s0, s1) in before.strokes.iter().zip(&after.strokes) {
                        if s0.client_id != e.change.client_id {
                            prop_assert_eq!(s0, s1);
                        }
                    }
                }
            }
            doc = next;
        }
    }
}
