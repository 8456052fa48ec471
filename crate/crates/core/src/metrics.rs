//! Session telemetry: an append-only log of authoring events per project
//! and the completion-time, waiting and exploration measures derived from it.
//!
//! Identities hold exactly because all arithmetic is on integer
//! milliseconds and rational minutes:
//! `T_active = T5 - T_wait` and `T_author = T5 - T_assemble`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AssetId, JobId, NodeId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SessionEventKind {
    SessionStarted,
    RequestIssued { node_id: NodeId, job_id: JobId },
    ResultPreviewable { node_id: NodeId, job_id: JobId },
    GenerationCall { node_id: NodeId, count: u32 },
    VariantRetained { node_id: NodeId, asset_id: AssetId },
    SceneCompleted { scene_index: u32 },
    AssemblyEntered,
    ExportCompleted,
    SessionClosed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub kind: SessionEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("session is closed")]
    ClosedSession,
    #[error("timestamp {got} precedes the last recorded {last}")]
    TimestampRegression { last: u64, got: u64 },
    #[error("missing anchor event: {0}")]
    MissingAnchor(&'static str),
    #[error("corrupt session log: {0}")]
    CorruptLog(String),
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::ClosedSession => "ClosedSession",
            MetricsError::TimestampRegression { .. } => "TimestampRegression",
            MetricsError::MissingAnchor(_) => "MissingAnchor",
            MetricsError::CorruptLog(_) => "CorruptLog",
        }
    }
}

/// In-memory view of one session log with the append guards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionLog {
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self, MetricsError> {
        let mut events = vec![];
        for (i, l) in lines.into_iter().enumerate() {
            let e: SessionEvent =
                serde_json::from_str(l).map_err(|e| MetricsError::CorruptLog(format!("line {}: {e}", i + 1)))?;
            events.push(e);
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn is_closed(&self) -> bool {
        matches!(
            self.events.last(),
            Some(SessionEvent {
                kind: SessionEventKind::SessionClosed,
                ..
            })
        )
    }

    pub fn has(&self, pred: impl Fn(&SessionEventKind) -> bool) -> bool {
        self.events.iter().any(|e| pred(&e.kind))
    }

    /// Validates and builds the next record without appending it.
    pub fn prepare(&self, timestamp: u64, kind: SessionEventKind) -> Result<SessionEvent, MetricsError> {
        if self.is_closed() {
            return Err(MetricsError::ClosedSession);
        }
        if let Some(last) = self.events.last() {
            if timestamp < last.timestamp {
                return Err(MetricsError::TimestampRegression {
                    last: last.timestamp,
                    got: timestamp,
                });
            }
        }
        Ok(SessionEvent {
            seq: self.events.len() as u64 + 1,
            timestamp,
            kind,
        })
    }

    pub fn commit(&mut self, event: SessionEvent) {
        debug_assert_eq!(event.seq, self.events.len() as u64 + 1);
        self.events.push(event);
    }

    pub fn record(&mut self, timestamp: u64, kind: SessionEventKind) -> Result<u64, MetricsError> {
        let e = self.prepare(timestamp, kind)?;
        let seq = e.seq;
        self.commit(e);
        Ok(seq)
    }
}

/// How overlapping wait intervals are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaitRule {
    /// Overlaps are merged, so waiting never exceeds wall-clock time.
    #[default]
    Union,
    /// Every interval counts in full.
    Sum,
}

pub type Minutes = Ratio<i64>;

pub fn minutes(ms: i64) -> Minutes {
    Ratio::new(ms, 60_000)
}

/// One decimal, rounding half away from zero.
pub fn format_minutes(m: Minutes) -> String {
    let tenths = (m * 10).round().to_integer();
    let sign = if tenths < 0 { "-" } else { "" };
    let a = tenths.abs();
    format!("{sign}{}.{}", a / 10, a % 10)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub t3: Option<Minutes>,
    pub t5: Option<Minutes>,
    pub t_wait: Minutes,
    pub t_active: Option<Minutes>,
    pub t_assemble: Option<Minutes>,
    pub t_author: Option<Minutes>,
    pub n_calls: u64,
    pub n_variants: u64,
    pub wait_rule: WaitRule,
    /// Previews with no matching request, by job.
    pub unmatched_previews: Vec<JobId>,
    /// Requests still waiting for a preview.
    pub pending_requests: Vec<JobId>,
}

fn union_length(mut intervals: Vec<(i64, i64)>) -> i64 {
    intervals.sort();
    let mut total = 0;
    let mut cur: Option<(i64, i64)> = None;
    for (a, b) in intervals {
        match cur {
            Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

/// Computes the report. Only `SessionStarted` is mandatory; measures whose
/// anchors are missing are `None`. Waits are clipped to the window ending
/// at the final export, when there is one.
pub fn compute_report(log: &SessionLog, rule: WaitRule) -> Result<MetricsReport, MetricsError> {
    let events = log.events();
    let start = events
        .iter()
        .find(|e| e.kind == SessionEventKind::SessionStarted)
        .map(|e| e.timestamp as i64)
        .ok_or(MetricsError::MissingAnchor("SessionStarted"))?;
    let export = events
        .iter()
        .rev()
        .find(|e| e.kind == SessionEventKind::ExportCompleted)
        .map(|e| e.timestamp as i64);
    let assembly = events
        .iter()
        .find(|e| e.kind == SessionEventKind::AssemblyEntered)
        .map(|e| e.timestamp as i64);

    let mut scenes = BTreeSet::new();
    let mut third = None;
    let mut requests: BTreeMap<&JobId, i64> = BTreeMap::new();
    let mut intervals = vec![];
    let mut unmatched_previews = vec![];
    let (mut n_calls, mut n_variants) = (0u64, 0u64);
    for e in events {
        let ts = e.timestamp as i64;
        match &e.kind {
            SessionEventKind::SceneCompleted { scene_index } => {
                if scenes.insert(*scene_index) && scenes.len() == 3 {
                    third = Some(ts);
                }
            }
            SessionEventKind::RequestIssued { job_id, .. } => {
                requests.insert(job_id, ts);
            }
            SessionEventKind::ResultPreviewable { job_id, .. } => match requests.remove(job_id) {
                Some(a) => intervals.push((a, ts)),
                None => unmatched_previews.push(job_id.clone()),
            },
            SessionEventKind::GenerationCall { count, .. } => n_calls += u64::from(*count),
            SessionEventKind::VariantRetained { .. } => n_variants += 1,
            _ => {}
        }
    }
    let window_end = export.unwrap_or(i64::MAX);
    let clipped: Vec<(i64, i64)> = intervals
        .into_iter()
        .map(|(a, b)| (a.max(start), b.min(window_end)))
        .filter(|(a, b)| b > a)
        .collect();
    let wait_ms = match rule {
        WaitRule::Union => union_length(clipped),
        WaitRule::Sum => clipped.iter().map(|(a, b)| b - a).sum(),
    };
    let t_wait = minutes(wait_ms);
    let t5 = export.map(|x| minutes(x - start));
    let t_assemble = match (assembly, export) {
        (Some(a), Some(x)) if a <= x => Some(minutes(x - a)),
        _ => None,
    };
    Ok(MetricsReport {
        t3: third.map(|t| minutes(t - start)),
        t5,
        t_wait,
        t_active: t5.map(|t| t - t_wait),
        t_assemble,
        t_author: match (t5, t_assemble) {
            (Some(t), Some(a)) => Some(t - a),
            _ => None,
        },
        n_calls,
        n_variants,
        wait_rule: rule,
        unmatched_previews,
        pending_requests: requests.into_keys().cloned().collect(),
    })
}

impl MetricsReport {
    /// The named measure, or `MissingAnchor` when it cannot be computed.
    pub fn require(&self, which: &'static str) -> Result<Minutes, MetricsError> {
        let v = match which {
            "T3" => self.t3,
            "T5" => self.t5,
            "T_wait" => Some(self.t_wait),
            "T_active" => self.t_active,
            "T_assemble" => self.t_assemble,
            "T_author" => self.t_author,
            _ => None,
        };
        v.ok_or(MetricsError::MissingAnchor(which))
    }

    fn rows(&self) -> Vec<(&'static str, &'static str, Option<String>)> {
        let m = |v: Option<Minutes>| v.map(format_minutes);
        vec![
            ("Completion time", "Time to 3 scenes T3 (min)", m(self.t3)),
            ("Completion time", "Time to final export T5 (min)", m(self.t5)),
            (
                "Completion time",
                "Assembly and export time T_assemble (min)",
                m(self.t_assemble),
            ),
            (
                "Completion time",
                "Iterative authoring time T_author (min)",
                m(self.t_author),
            ),
            (
                "System waiting vs. User effort",
                "Total waiting time T_wait (min)",
                m(Some(self.t_wait)),
            ),
            (
                "System waiting vs. User effort",
                "Active time T_active (min)",
                m(self.t_active),
            ),
            (
                "Exploration behavior",
                "Generation calls (counts) N_calls",
                Some(self.n_calls.to_string()),
            ),
            (
                "Exploration behavior",
                "Retained variants (counts) N_variants",
                Some(self.n_variants.to_string()),
            ),
        ]
    }

    /// Aligned plain-text table; missing measures print as `-`.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let label_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let value_w = rows
            .iter()
            .map(|r| r.2.as_deref().unwrap_or("-").len())
            .max()
            .unwrap_or(1)
            .max(5);
        let mut out = String::new();
        writeln!(out, "{:<label_w$}  {:>value_w$}", "Metric", "Value").unwrap();
        let mut group = "";
        for (g, label, v) in rows {
            if g != group {
                writeln!(out, "{g}").unwrap();
                group = g;
            }
            writeln!(out, "{label:<label_w$}  {:>value_w$}", v.as_deref().unwrap_or("-")).unwrap();
        }
        if !self.unmatched_previews.is_empty() {
            writeln!(out, "unmatched previews: {}", self.unmatched_previews.len()).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = |v: Option<Minutes>| match v {
            Some(r) => serde_json::json!({
                "minutes": format_minutes(r),
                "ratio": [*r.numer(), *r.denom()],
            }),
            None => serde_json::Value::Null,
        };
        serde_json::json!({
            "T3": m(self.t3),
            "T5": m(self.t5),
            "T_wait": m(Some(self.t_wait)),
            "T_active": m(self.t_active),
            "T_assemble": m(self.t_assemble),
            "T_author": m(self.t_author),
            "N_calls": self.n_calls,
            "N_variants": self.n_variants,
            "wait_rule": self.wait_rule,
            "unmatched_previews": self.unmatched_previews,
            "pending_requests": self.pending_requests,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: u64 = 60_000;

    fn job(i: u8) -> JobId {
        JobId::new(format!("{i:032x}"))
    }

    #[test]
    fn guards() {
        let mut log = SessionLog::new();
        assert_eq!(log.record(10, SessionEventKind::SessionStarted), Ok(1));
        assert_eq!(
            log.record(5, SessionEventKind::AssemblyEntered),
            Err(MetricsError::TimestampRegression { last: 10, got: 5 })
        );
        log.record(11, SessionEventKind::SessionClosed).unwrap();
        assert_eq!(
            log.record(12, SessionEventKind::ExportCompleted),
            Err(MetricsError::ClosedSession)
        );
    }

    #[test]
    fn missing_start_is_an_error() {
        let log = SessionLog::new();
        assert_eq!(
            compute_report(&log, WaitRule::Union).unwrap_err(),
            MetricsError::MissingAnchor("SessionStarted")
        );
    }

    #[test]
    fn unmatched_preview_is_flagged_not_counted() {
        let mut log = SessionLog::new();
        log.record(0, SessionEventKind::SessionStarted).unwrap();
        let n = NodeId::new("n");
        log.record(
            MIN,
            SessionEventKind::ResultPreviewable {
                node_id: n,
                job_id: job(1),
            },
        )
        .unwrap();
        let r = compute_report(&log, WaitRule::Union).unwrap();
        assert_eq!(r.unmatched_previews, vec![job(1)]);
        assert_eq!(r.t_wait, minutes(0));
        assert!(r.t5.is_none());
        assert_eq!(r.require("T5"), Err(MetricsError::MissingAnchor("T5")));
    }

    #[test]
    fn union_and_sum_differ_on_overlap() {
        let mut log = SessionLog::new();
        let n = NodeId::new("n");
        log.record(0, SessionEventKind::SessionStarted).unwrap();
        log.record(
            MIN,
            SessionEventKind::RequestIssued {
                node_id: n.clone(),
                job_id: job(1),
            },
        )
        .unwrap();
        log.record(
            2 * MIN,
            SessionEventKind::RequestIssued {
                node_id: n.clone(),
                job_id: job(2),
            },
        )
        .unwrap();
        log.record(
            4 * MIN,
            SessionEventKind::ResultPreviewable {
                node_id: n.clone(),
                job_id: job(1),
            },
        )
        .unwrap();
        log.record(
            5 * MIN,
            SessionEventKind::ResultPreviewable {
                node_id: n,
                job_id: job(2),
            },
        )
        .unwrap();
        assert_eq!(
            compute_report(&log, WaitRule::Union).unwrap().t_wait,
            minutes(4 * MIN as i64)
        );
        assert_eq!(
            compute_report(&log, WaitRule::Sum).unwrap().t_wait,
            minutes(6 * MIN as i64)
        );
    }

    #[test]
    fn minutes_format_to_one_decimal() {
        assert_eq!(format_minutes(minutes(2_268_000)), "37.8");
        assert_eq!(format_minutes(minutes(3_000)), "0.1");
        assert_eq!(format_minutes(minutes(2_999)), "0.0");
        assert_eq!(format_minutes(minutes(-3_000)), "-0.1");
    }
}
