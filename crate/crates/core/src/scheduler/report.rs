use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crew::ArtifactId;
use crate::graph::{EventId, ValidatedGraph};
use crate::Time;

use super::ScheduleDecision;

/// Snapshot of the run at the start of a time slice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub slice_index: u64,
    /// Boundary time that opened this slice.
    pub time: Time,
    pub running: BTreeMap<EventId, RunningEntry>,
    pub done: BTreeMap<EventId, DoneEntry>,
    pub revoked_history: Vec<Revocation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailedAttempt>,
    /// Attempt counters above 1. Missing entries mean attempt 1.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attempts: BTreeMap<EventId, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningEntry {
    pub attempt: u32,
    pub start: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoneEntry {
    pub attempt: u32,
    pub artifact_id: ArtifactId,
    pub finish: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revocation {
    pub slice: u64,
    pub event_id: EventId,
    pub attempt: u32,
    /// Feedback id that caused the revocation.
    pub reason: String,
    /// True when revoked as a started dependent of the feedback target.
    pub cascade: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub slice: u64,
    pub event_id: EventId,
    pub attempt: u32,
    pub error: String,
}

/// Lifecycle state of one event as seen in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventState {
    Pending,
    Ready,
    Running,
    Done,
}

/// A worker finishing one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub event_id: EventId,
    pub attempt: u32,
    pub finish: Time,
    pub outcome: CompletionOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompletionOutcome {
    Done { artifact_id: ArtifactId },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvanceError {
    #[error("completion for `{event_id}` attempt {attempt} does not match a running event")]
    UnknownCompletion { event_id: EventId, attempt: u32 },
    #[error("cannot revoke `{0}`: it is neither running nor done")]
    RevokeNotStarted(EventId),
    #[error("cannot enqueue `{0}`: it is already running or done")]
    EnqueueStarted(EventId),
    #[error("boundary time {next} precedes current time {current}")]
    TimeWentBackwards { current: Time, next: Time },
    #[error("completion for `{event_id}` finishes at {finish} before its start at {start}")]
    FinishBeforeStart { event_id: EventId, start: Time, finish: Time },
}

impl ProgressReport {
    /// Attempt number the event's next or current execution uses.
    pub fn attempt(&self, id: &str) -> u32 {
        self.attempts.get(id).copied().unwrap_or(1)
    }

    pub fn is_complete(&self, graph: &ValidatedGraph) -> bool {
        self.done.len() == graph.len() && graph.events().iter().all(|e| self.done.contains_key(&e.id))
    }

    pub fn state_of(&self, graph: &ValidatedGraph, id: &str) -> EventState {
        if self.running.contains_key(id) {
            EventState::Running
        } else if self.done.contains_key(id) {
            EventState::Done
        } else if graph.dependencies(id).all(|d| self.done.contains_key(d)) {
            EventState::Ready
        } else {
            EventState::Pending
        }
    }

    pub fn failures_of(&self, id: &str) -> usize {
        self.failures.iter().filter(|f| f.event_id.as_str() == id).count()
    }

    pub fn mark_running(&mut self, id: &str, attempt: u32, start: Time) {
        self.running.insert(EventId::new(id), RunningEntry { attempt, start });
    }

    pub fn mark_done(&mut self, id: &str, attempt: u32, artifact: &str, finish: Time) {
        self.running.remove(id);
        self.done.insert(EventId::new(id), DoneEntry { attempt, artifact_id: ArtifactId::new(artifact), finish });
    }
}

/// The progress update: applies `decision` to `report`, opens the next slice
/// at `time`, then folds in the completions that caused the boundary.
pub fn advance(
    report: &ProgressReport,
    decision: &ScheduleDecision,
    completions: &[Completion],
    time: Time,
) -> Result<ProgressReport, AdvanceError> {
    let mut next = report.clone();
    apply_decision(&mut next, decision)?;
    begin_slice(&mut next, time)?;
    for completion in completions {
        apply_completion(&mut next, completion)?;
    }
    Ok(next)
}

/// Revocations first, then enqueues, both stamped with the current slice.
pub(crate) fn apply_decision(report: &mut ProgressReport, decision: &ScheduleDecision) -> Result<(), AdvanceError> {
    for id in &decision.revoke {
        let attempt = if let Some(entry) = report.running.remove(id) {
            entry.attempt
        } else if let Some(entry) = report.done.remove(id) {
            entry.attempt
        } else {
            return Err(AdvanceError::RevokeNotStarted(id.clone()));
        };
        report.revoked_history.push(Revocation {
            slice: report.slice_index,
            event_id: id.clone(),
            attempt,
            reason: decision.reason.clone().unwrap_or_default(),
            cascade: decision.origin.as_ref() != Some(id),
        });
        report.attempts.insert(id.clone(), attempt + 1);
    }
    for id in &decision.enqueue {
        if report.running.contains_key(id) || report.done.contains_key(id) {
            return Err(AdvanceError::EnqueueStarted(id.clone()));
        }
        let attempt = report.attempt(id.as_str());
        report.running.insert(id.clone(), RunningEntry { attempt, start: report.time });
    }
    Ok(())
}

pub(crate) fn begin_slice(report: &mut ProgressReport, time: Time) -> Result<(), AdvanceError> {
    if time < report.time {
        return Err(AdvanceError::TimeWentBackwards { current: report.time, next: time });
    }
    report.slice_index += 1;
    report.time = time;
    Ok(())
}

pub(crate) fn apply_completion(report: &mut ProgressReport, completion: &Completion) -> Result<(), AdvanceError> {
    let id = &completion.event_id;
    let entry = match report.running.get(id) {
        Some(entry) if entry.attempt == completion.attempt => *entry,
        _ => return Err(AdvanceError::UnknownCompletion { event_id: id.clone(), attempt: completion.attempt }),
    };
    if completion.finish < entry.start {
        return Err(AdvanceError::FinishBeforeStart {
            event_id: id.clone(),
            start: entry.start,
            finish: completion.finish,
        });
    }
    report.running.remove(id);
    match &completion.outcome {
        CompletionOutcome::Done { artifact_id } => {
            report.done.insert(
                id.clone(),
                DoneEntry { attempt: entry.attempt, artifact_id: artifact_id.clone(), finish: completion.finish },
            );
        }
        CompletionOutcome::Failed { error } => {
            report.failures.push(FailedAttempt {
                slice: report.slice_index,
                event_id: id.clone(),
                attempt: entry.attempt,
                error: error.clone(),
            });
            report.attempts.insert(id.clone(), entry.attempt + 1);
        }
    }
    Ok(())
}
