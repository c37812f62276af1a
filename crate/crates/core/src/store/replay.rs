use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{EventLogRecord, RecordKind};
use crate::crew::{ArtifactId, ArtifactKind};
use crate::graph::EventId;
use crate::scheduler::report::{apply_completion, apply_decision, begin_slice};
use crate::scheduler::{Completion, CompletionOutcome, Mode, ProgressReport, ScheduleDecision};
use crate::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub event_id: EventId,
    pub attempt: u32,
    pub content_hash: String,
    pub kind: ArtifactKind,
    pub finish: Time,
    pub revoked: bool,
}

/// One bar of a Gantt chart: an attempt from dispatch to completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanttRow {
    pub event_id: EventId,
    pub attempt: u32,
    pub start: Time,
    pub end: Option<Time>,
    pub revoked: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub seq: u64,
    pub feedback_id: String,
    pub accepted: bool,
}

/// A run as reconstructed from its log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub pipeline: String,
    pub seed: u64,
    pub mode: Mode,
    pub events: Vec<EventId>,
    pub status: RunStatus,
    pub latest_report: ProgressReport,
    pub artifacts: BTreeMap<ArtifactId, ArtifactMeta>,
    pub feedback: Vec<FeedbackEntry>,
    pub makespan: Option<Time>,
    pub slice_count: u64,
    pub last_seq: u64,
    pub gantt: Vec<GanttRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty log")]
    Empty,
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("replayed state differs from the stored snapshot: {0}")]
    Mismatch(String),
}

/// Incremental log fold. Each record is applied with the same state
/// transitions the run loop used to produce it.
#[derive(Debug, Clone, Default)]
pub struct LogFolder {
    state: Option<RunState>,
}

impl LogFolder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> Option<&RunState> {
        self.state.as_ref()
    }

    pub fn into_state(self) -> Result<RunState, ReplayError> {
        self.state.ok_or(ReplayError::Empty)
    }

    pub fn push(&mut self, record: &EventLogRecord) -> Result<(), ReplayError> {
        let seq = record.seq;
        let corrupt = |reason: String| ReplayError::CorruptLog { seq, reason };
        let Some(state) = self.state.as_mut() else {
            if record.kind != RecordKind::Start || seq != 0 || record.slice != 0 {
                return Err(corrupt("log must open with a start record at seq 0, slice 0".into()));
            }
            self.state = Some(start_state(record).map_err(corrupt)?);
            return Ok(());
        };

        if seq != state.last_seq + 1 {
            return Err(corrupt(format!("expected seq {}", state.last_seq + 1)));
        }
        if state.status != RunStatus::Running {
            return Err(corrupt("record after finish".into()));
        }
        let report = &mut state.latest_report;
        if record.slice == report.slice_index + 1 {
            begin_slice(report, record.time).map_err(|e| corrupt(e.to_string()))?;
        } else if record.slice != report.slice_index {
            return Err(corrupt(format!("slice {} after slice {}", record.slice, report.slice_index)));
        } else if record.time != report.time {
            return Err(corrupt(format!("time {} inside a slice opened at {}", record.time, report.time)));
        }
        if record.kind == RecordKind::Start {
            return Err(corrupt("second start record".into()));
        }
        state.last_seq = seq;
        state.slice_count = report.slice_index + 1;

        let event = || record.event_id.clone().ok_or_else(|| corrupt("missing event_id".into()));
        let attempt = || record.attempt.ok_or_else(|| corrupt("missing attempt".into()));
        match record.kind {
            RecordKind::Start => unreachable!(),
            RecordKind::Enqueue => {
                let id = event()?;
                let attempt = attempt()?;
                if report.attempt(id.as_str()) != attempt {
                    return Err(corrupt(format!(
                        "`{id}` enqueued at attempt {attempt}, expected {}",
                        report.attempt(id.as_str())
                    )));
                }
                let decision = ScheduleDecision { enqueue: [id.clone()].into(), ..Default::default() };
                apply_decision(report, &decision).map_err(|e| corrupt(e.to_string()))?;
                state.gantt.push(GanttRow {
                    event_id: id,
                    attempt,
                    start: record.time,
                    end: None,
                    revoked: false,
                    failed: false,
                });
            }
            RecordKind::Revoke => {
                let id = event()?;
                let attempt = attempt()?;
                let current =
                    report.running.get(&id).map(|r| r.attempt).or_else(|| report.done.get(&id).map(|d| d.attempt));
                if current != Some(attempt) {
                    return Err(corrupt(format!("revoke of `{id}` attempt {attempt}, which is not started")));
                }
                let done_artifact = report.done.get(&id).map(|d| d.artifact_id.clone());
                let decision = ScheduleDecision {
                    revoke: [id.clone()].into(),
                    reason: text(&record.payload, "reason"),
                    origin: text(&record.payload, "target").map(EventId::new),
                    ..Default::default()
                };
                apply_decision(report, &decision).map_err(|e| corrupt(e.to_string()))?;
                if let Some(artifact) = done_artifact.and_then(|a| state.artifacts.get_mut(&a)) {
                    artifact.revoked = true;
                }
                if let Some(row) = state.gantt.iter_mut().rev().find(|r| r.event_id == id && r.attempt == attempt) {
                    row.revoked = true;
                    row.end.get_or_insert(record.time);
                }
            }
            RecordKind::Complete => {
                let id = event()?;
                let attempt = attempt()?;
                let artifact_id =
                    text(&record.payload, "artifact_id").ok_or_else(|| corrupt("missing artifact_id".into()))?;
                let content_hash =
                    text(&record.payload, "content_hash").ok_or_else(|| corrupt("missing content_hash".into()))?;
                let kind: ArtifactKind = record
                    .payload
                    .get("kind")
                    .cloned()
                    .and_then(|k| serde_json::from_value(k).ok())
                    .ok_or_else(|| corrupt("missing artifact kind".into()))?;
                let completion = Completion {
                    event_id: id.clone(),
                    attempt,
                    finish: record.time,
                    outcome: CompletionOutcome::Done { artifact_id: ArtifactId::new(artifact_id.clone()) },
                };
                apply_completion(report, &completion).map_err(|e| corrupt(e.to_string()))?;
                state.artifacts.insert(
                    ArtifactId::new(artifact_id),
                    ArtifactMeta {
                        event_id: id.clone(),
                        attempt,
                        content_hash,
                        kind,
                        finish: record.time,
                        revoked: false,
                    },
                );
                close_row(&mut state.gantt, &id, attempt, record.time, false);
            }
            RecordKind::Fail => {
                let id = event()?;
                let attempt = attempt()?;
                let completion = Completion {
                    event_id: id.clone(),
                    attempt,
                    finish: record.time,
                    outcome: CompletionOutcome::Failed { error: text(&record.payload, "error").unwrap_or_default() },
                };
                apply_completion(report, &completion).map_err(|e| corrupt(e.to_string()))?;
                close_row(&mut state.gantt, &id, attempt, record.time, true);
            }
            RecordKind::Feedback => {
                let feedback_id =
                    text(&record.payload, "feedback_id").ok_or_else(|| corrupt("missing feedback_id".into()))?;
                let accepted = record.payload.get("accepted").and_then(Value::as_bool).unwrap_or(false);
                state.feedback.push(FeedbackEntry { seq, feedback_id, accepted });
            }
            RecordKind::Wait => {}
            RecordKind::Finish => {
                let status = match record.payload.get("status").and_then(Value::as_str) {
                    Some("completed") => RunStatus::Completed,
                    Some("failed") => RunStatus::Failed,
                    other => return Err(corrupt(format!("finish status {other:?}"))),
                };
                if let Some(slices) = record.payload.get("slices").and_then(Value::as_u64) {
                    if slices != state.slice_count {
                        return Err(corrupt(format!("finish reports {slices} slices, log has {}", state.slice_count)));
                    }
                }
                state.status = status;
                state.makespan = record.payload.get("makespan").and_then(Value::as_u64);
            }
        }
        Ok(())
    }
}

fn text(payload: &Value, key: &str) -> Option<String> {
    payload.get(key).and_then(Value::as_str).map(str::to_owned)
}

fn close_row(rows: &mut [GanttRow], id: &EventId, attempt: u32, time: Time, failed: bool) {
    if let Some(row) = rows.iter_mut().rev().find(|r| &r.event_id == id && r.attempt == attempt && r.end.is_none()) {
        row.end = Some(time);
        row.failed = failed;
    }
}

fn start_state(record: &EventLogRecord) -> Result<RunState, String> {
    let p = &record.payload;
    let mode = match p.get("mode").and_then(Value::as_str) {
        Some(m) => m.parse().map_err(|e: String| e)?,
        None => Mode::Parallel,
    };
    let events = p
        .get("events")
        .and_then(Value::as_array)
        .map(|list| {
            list.iter().filter_map(|e| e.get("id").or(Some(e)).and_then(Value::as_str)).map(EventId::new).collect()
        })
        .unwrap_or_default();
    Ok(RunState {
        run_id: text(p, "run_id").unwrap_or_default(),
        pipeline: text(p, "pipeline").unwrap_or_default(),
        seed: p.get("seed").and_then(Value::as_u64).ok_or("start record lacks a seed")?,
        mode,
        events,
        status: RunStatus::Running,
        latest_report: ProgressReport { time: record.time, ..Default::default() },
        artifacts: BTreeMap::new(),
        feedback: Vec::new(),
        makespan: None,
        slice_count: 1,
        last_seq: 0,
        gantt: Vec::new(),
    })
}

/// Folds a whole log.
pub fn replay(records: &[EventLogRecord]) -> Result<RunState, ReplayError> {
    let mut folder = LogFolder::new();
    for record in records {
        folder.push(record)?;
    }
    folder.into_state()
}

/// Checks a replayed state against the snapshot the run loop stored.
pub fn verify_against(state: &RunState, stored: &ProgressReport) -> Result<(), ReplayError> {
    let replayed = &state.latest_report;
    let checks: [(&str, bool); 7] = [
        ("slice_index", replayed.slice_index == stored.slice_index),
        ("time", replayed.time == stored.time),
        ("running", replayed.running == stored.running),
        ("done", replayed.done == stored.done),
        ("revoked_history", replayed.revoked_history == stored.revoked_history),
        ("failures", replayed.failures == stored.failures),
        ("attempts", replayed.attempts == stored.attempts),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((field, _)) => Err(ReplayError::Mismatch(format!("field `{field}` differs"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(
        seq: u64,
        time: Time,
        slice: u64,
        kind: RecordKind,
        event: Option<(&str, u32)>,
        payload: Value,
    ) -> EventLogRecord {
        EventLogRecord {
            seq,
            time,
            slice,
            kind,
            event_id: event.map(|(e, _)| e.into()),
            attempt: event.map(|(_, a)| a),
            payload,
        }
    }

    fn start() -> EventLogRecord {
        rec(
            0,
            0,
            0,
            RecordKind::Start,
            None,
            json!({"pipeline": "p", "seed": 42, "mode": "parallel", "run_id": "r", "events": [{"id": "a"}]}),
        )
    }

    fn complete(seq: u64, time: Time, slice: u64, id: &str) -> EventLogRecord {
        rec(
            seq,
            time,
            slice,
            RecordKind::Complete,
            Some((id, 1)),
            json!({"artifact_id": format!("{id}.1.x"), "content_hash": "h", "kind": "generic"}),
        )
    }

    #[test]
    fn folds_a_small_run() {
        let log = vec![
            start(),
            rec(1, 0, 0, RecordKind::Enqueue, Some(("a", 1)), json!({})),
            complete(2, 5, 1, "a"),
            rec(3, 5, 1, RecordKind::Finish, None, json!({"status": "completed", "makespan": 5, "slices": 2})),
        ];
        let state = replay(&log).unwrap();
        assert_eq!(state.status, RunStatus::Completed);
        assert_eq!(state.makespan, Some(5));
        assert_eq!(state.latest_report.done["a"].finish, 5);
        assert_eq!(
            state.gantt,
            [GanttRow { event_id: "a".into(), attempt: 1, start: 0, end: Some(5), revoked: false, failed: false }]
        );
        assert_eq!(state.events, [EventId::from("a")]);
    }

    #[test]
    fn truncated_log_is_running() {
        let log = vec![start(), rec(1, 0, 0, RecordKind::Enqueue, Some(("a", 1)), json!({}))];
        let state = replay(&log).unwrap();
        assert_eq!(state.status, RunStatus::Running);
        assert!(state.latest_report.running.contains_key("a"));
    }

    #[test]
    fn complete_before_start_is_corrupt() {
        let log = vec![start(), complete(1, 5, 1, "a")];
        assert!(matches!(replay(&log), Err(ReplayError::CorruptLog { seq: 1, .. })));
    }

    #[test]
    fn structural_violations() {
        assert_eq!(replay(&[]), Err(ReplayError::Empty));
        let gap = vec![start(), rec(2, 0, 0, RecordKind::Wait, None, json!({}))];
        assert!(matches!(replay(&gap), Err(ReplayError::CorruptLog { seq: 2, .. })));
        let jump = vec![start(), rec(1, 3, 2, RecordKind::Wait, None, json!({}))];
        assert!(replay(&jump).is_err());
        let split_time = vec![start(), rec(1, 3, 0, RecordKind::Wait, None, json!({}))];
        assert!(replay(&split_time).is_err());
        let backwards = vec![
            start(),
            rec(1, 0, 0, RecordKind::Enqueue, Some(("a", 1)), json!({})),
            rec(2, 5, 1, RecordKind::Wait, None, json!({})),
            rec(3, 4, 2, RecordKind::Wait, None, json!({})),
        ];
        assert!(replay(&backwards).is_err());
        let after_finish = vec![
            start(),
            rec(1, 0, 0, RecordKind::Finish, None, json!({"status": "failed"})),
            rec(2, 0, 0, RecordKind::Wait, None, json!({})),
        ];
        assert!(replay(&after_finish).is_err());
    }

    #[test]
    fn revocation_marks_rows_and_artifacts() {
        let log = vec![
            start(),
            rec(1, 0, 0, RecordKind::Enqueue, Some(("a", 1)), json!({})),
            complete(2, 5, 1, "a"),
            rec(3, 5, 1, RecordKind::Feedback, None, json!({"feedback_id": "fb-0", "accepted": true})),
            rec(
                4,
                5,
                1,
                RecordKind::Revoke,
                Some(("a", 1)),
                json!({"reason": "fb-0", "target": "a", "cascade": false}),
            ),
            rec(5, 5, 2, RecordKind::Enqueue, Some(("a", 2)), json!({})),
        ];
        let state = replay(&log).unwrap();
        assert!(state.artifacts.values().all(|a| a.revoked));
        assert!(state.gantt[0].revoked);
        assert_eq!(state.gantt[1].attempt, 2);
        assert_eq!(state.latest_report.revoked_history.len(), 1);
        assert!(!state.latest_report.revoked_history[0].cascade);
        assert_eq!(state.feedback.len(), 1);

        let mut stale = state.latest_report.clone();
        stale.attempts.clear();
        assert!(verify_against(&state, &state.latest_report).is_ok());
        assert!(matches!(verify_against(&state, &stale), Err(ReplayError::Mismatch(_))));
    }

    #[test]
    fn enqueue_at_wrong_attempt_is_corrupt() {
        let log = vec![start(), rec(1, 0, 0, RecordKind::Enqueue, Some(("a", 2)), json!({}))];
        assert!(replay(&log).is_err());
    }
}
