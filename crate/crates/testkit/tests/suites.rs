use num_rational::Ratio;
use proptest::prelude::*;
use reeltree_core::ids::{JobId, NodeId};
use reeltree_core::metrics::{compute_report, SessionEventKind, SessionLog, WaitRule};
use reeltree_testkit::metrics_logs::{anchored_log, covered_ms};
use reeltree_testkit::{layout_check, planning, provenance, tree_ops};

#[test]
fn tree_operation_sequences() {
    let t = tree_ops::suite(64, 30).unwrap();
    assert_eq!(t.cases, 64);
    println!("{t}");
    assert!(t.accepted * 3 > t.steps, "too few operations got past the guards: {t}");
}

#[test]
fn layouts_of_random_trees() {
    layout_check::suite(40, 200).unwrap();
}

#[test]
fn planning_is_total() {
    let t = planning::check_pipeline(2).unwrap();
    assert!(t.cases > 100);
    planning::check_review_gate(1).unwrap();
}

#[test]
fn stitching_and_pruning_keep_provenance() {
    let t = provenance::suite(4, 150).unwrap();
    assert_eq!(t.steps, 600);
    println!("{t}");
    assert!(t.accepted * 3 > t.steps, "too few steps changed the project: {t}");
}

#[test]
fn multisets_are_counted_once() {
    // 1 + 3 + 6 + 10 multisets of sizes 0..=3 over three modalities.
    assert_eq!(planning::multisets(3).len(), 20);
    assert_eq!(planning::multisets(0).len(), 1);
}

fn minutes(tenths: u64) -> Ratio<i64> {
    Ratio::new(tenths as i64, 10)
}

proptest! {
    #[test]
    fn identities_hold_for_any_anchors(t_wait in 0u64..400, t_assemble in 0u64..200, spare in 0u64..400, pieces in 1u64..6, overlap: bool) {
        let t5 = t_wait + t_assemble + spare;
        prop_assume!(t5 > 0);
        let log = anchored_log(t5, t_wait, t_assemble, pieces, overlap);
        let r = compute_report(&log, WaitRule::Union).unwrap();
        prop_assert_eq!(r.t5, Some(minutes(t5)));
        prop_assert_eq!(r.t_wait, minutes(t_wait));
        prop_assert_eq!(r.t_assemble, Some(minutes(t_assemble)));
        prop_assert_eq!(r.t_active.unwrap() + r.t_wait, r.t5.unwrap());
        prop_assert_eq!(r.t_author.unwrap() + r.t_assemble.unwrap(), r.t5.unwrap());
        let sum = compute_report(&log, WaitRule::Sum).unwrap();
        prop_assert!(sum.t_wait >= r.t_wait);
    }

    #[test]
    fn union_wait_matches_marking(intervals in proptest::collection::vec((0u64..2_000, 1u64..500), 0..12)) {
        let spans: Vec<(u64, u64)> = intervals.iter().map(|&(a, len)| (a, a + len)).collect();
        let mut events: Vec<(u64, SessionEventKind)> = vec![(0, SessionEventKind::SessionStarted)];
        for (i, &(a, b)) in spans.iter().enumerate() {
            let (node_id, job_id) = (NodeId::new(format!("n{i}")), JobId::new(format!("j{i}")));
            events.push((a, SessionEventKind::RequestIssued { node_id: node_id.clone(), job_id: job_id.clone() }));
            events.push((b, SessionEventKind::ResultPreviewable { node_id, job_id }));
        }
        events.sort_by_key(|(t, _)| *t);
        let mut log = SessionLog::new();
        for (t, k) in events {
            log.record(t, k).unwrap();
        }
        let union = compute_report(&log, WaitRule::Union).unwrap().t_wait;
        let sum = compute_report(&log, WaitRule::Sum).unwrap().t_wait;
        let per_minute = |ms: u64| Ratio::new(ms as i64, 60_000);
        prop_assert_eq!(union, per_minute(covered_ms(&spans, 3_000)));
        prop_assert_eq!(sum, per_minute(spans.iter().map(|(a, b)| b - a).sum()));
    }

    #[test]
    fn counters_never_decrease_as_the_log_grows(calls in proptest::collection::vec((1u32..5, any::<bool>()), 1..30)) {
        let mut log = SessionLog::new();
        log.record(0, SessionEventKind::SessionStarted).unwrap();
        let mut last = (0, 0);
        for (i, (count, keep)) in calls.into_iter().enumerate() {
            let node_id = NodeId::new(format!("n{i}"));
            let kind = if keep {
                SessionEventKind::VariantRetained { node_id, asset_id: reeltree_core::ids::AssetId::new(format!("{i:064x}")) }
            } else {
                SessionEventKind::GenerationCall { node_id, count }
            };
            log.record(i as u64 + 1, kind).unwrap();
            let r = compute_report(&log, WaitRule::Union).unwrap();
            prop_assert!(r.n_calls >= last.0 && r.n_variants >= last.1);
            last = (r.n_calls, r.n_variants);
        }
    }
}
