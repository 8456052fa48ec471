//! Synthetic session logs with chosen anchor values, and a marking oracle
//! for aggregated waiting time.

use reeltree_core::ids::{JobId, NodeId};
use reeltree_core::metrics::{SessionEventKind, SessionLog};

pub const MS_PER_TENTH_MINUTE: u64 = 6_000;

/// A log whose T5, T_wait and T_assemble equal the given tenths of a
/// minute. Waiting is split over `pieces` disjoint requests before
/// assembly starts; `overlap` adds a parallel request nested inside the
/// first one, which a union rule must not count again.
pub fn anchored_log(t5: u64, t_wait: u64, t_assemble: u64, pieces: u64, overlap: bool) -> SessionLog {
    let ms = |tenths: u64| tenths * MS_PER_TENTH_MINUTE;
    let (t5, t_wait, t_assemble) = (ms(t5), ms(t_wait), ms(t_assemble));
    assert!(t_wait + t_assemble <= t5, "anchors do not fit in the session");
    let mut events: Vec<(u64, SessionEventKind)> = vec![(0, SessionEventKind::SessionStarted)];
    let pieces = pieces.max(1);
    let slack = t5 - t_assemble - t_wait;
    let gap = slack / (pieces + 1);
    let mut at = gap;
    let mut left = t_wait;
    for i in 0..pieces {
        let len = if i + 1 == pieces { left } else { t_wait / pieces };
        left -= len;
        let node = NodeId::new(format!("n{i}"));
        let job = JobId::new(format!("j{i}"));
        events.push((
            at,
            SessionEventKind::RequestIssued {
                node_id: node.clone(),
                job_id: job.clone(),
            },
        ));
        events.push((
            at,
            SessionEventKind::GenerationCall {
                node_id: node.clone(),
                count: 1,
            },
        ));
        events.push((
            at + len,
            SessionEventKind::ResultPreviewable {
                node_id: node,
                job_id: job,
            },
        ));
        if overlap && i == 0 && len >= 2 {
            let node = NodeId::new("parallel");
            let job = JobId::new("jp");
            events.push((
                at + 1,
                SessionEventKind::RequestIssued {
                    node_id: node.clone(),
                    job_id: job.clone(),
                },
            ));
            events.push((
                at + len - 1,
                SessionEventKind::ResultPreviewable {
                    node_id: node,
                    job_id: job,
                },
            ));
        }
        at += len + gap;
    }
    for k in 1..=3 {
        events.push((
            k * (t5 - t_assemble) / 3,
            SessionEventKind::SceneCompleted { scene_index: k as u32 },
        ));
    }
    events.push((t5 - t_assemble, SessionEventKind::AssemblyEntered));
    events.push((t5, SessionEventKind::ExportCompleted));
    events.sort_by_key(|(t, _)| *t);
    let mut log = SessionLog::new();
    for (t, kind) in events {
        log.record(t, kind).expect("timestamps are sorted");
    }
    log
}

/// Milliseconds covered by at least one interval, found by marking every
/// millisecond of `[0, horizon)`.
pub fn covered_ms(intervals: &[(u64, u64)], horizon: u64) -> u64 {
    let mut marks = vec![false; horizon as usize];
    for &(a, b) in intervals {
        for m in marks.iter_mut().take(b.min(horizon) as usize).skip(a as usize) {
            *m = true;
        }
    }
    marks.iter().filter(|m| **m).count() as u64
}
