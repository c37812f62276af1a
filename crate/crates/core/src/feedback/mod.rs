//! User feedback and its translation into revocations.
//!
//! Feedback comes in three kinds, ordered by how much the user says:
//! [`FeedbackKind::YesNo`] carries only a verdict, [`FeedbackKind::Critical`]
//! adds a note describing what is wrong, and [`FeedbackKind::Detailed`] adds
//! concrete parameter amendments. [`interpret`] turns a rejection into the set
//! of events to revoke: the target plus every started event downstream of it.

mod policy;
mod source;

pub use policy::{EligiblePoints, FrequencyPolicy, PolicyName};
pub use source::{
    scripted_feedback_source, FeedbackSource, FeedbackTrace, ScriptedFeedback, Silent, TraceItem, Trigger,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::{transitive_dependents, EventId, Params, ValidatedGraph};
use crate::scheduler::ProgressReport;
use crate::Time;

/// Parameter key under which a rejection note reaches the worker.
pub const DIRECTOR_NOTE: &str = "director_note";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    YesNo,
    Critical,
    Detailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
}

/// One user comment on an intermediate result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub id: String,
    #[serde(default)]
    pub arrival_time: Time,
    /// Event id, or the id of an artifact that event produced.
    pub target: String,
    pub kind: FeedbackKind,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub amendments: Params,
}

impl Feedback {
    pub fn yes_no(id: impl Into<String>, target: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            id: id.into(),
            arrival_time: 0,
            target: target.into(),
            kind: FeedbackKind::YesNo,
            verdict,
            note: String::new(),
            amendments: Params::new(),
        }
    }

    pub fn critical(
        id: impl Into<String>,
        target: impl Into<String>,
        verdict: Verdict,
        note: impl Into<String>,
    ) -> Self {
        Self { kind: FeedbackKind::Critical, note: note.into(), ..Self::yes_no(id, target, verdict) }
    }

    pub fn detailed(
        id: impl Into<String>,
        target: impl Into<String>,
        verdict: Verdict,
        note: impl Into<String>,
        amendments: Params,
    ) -> Self {
        Self { kind: FeedbackKind::Detailed, note: note.into(), amendments, ..Self::yes_no(id, target, verdict) }
    }

    /// Checks the per-kind shape: yes/no carries nothing but the verdict,
    /// critical needs a note and no amendments, detailed needs a note.
    pub fn validate(&self) -> Result<(), FeedbackError> {
        let problem = match self.kind {
            FeedbackKind::YesNo if !self.note.is_empty() => Some("yes/no feedback cannot carry a note"),
            FeedbackKind::YesNo if !self.amendments.is_empty() => Some("yes/no feedback cannot carry amendments"),
            FeedbackKind::Critical if self.note.is_empty() => Some("critical feedback needs a note"),
            FeedbackKind::Critical if !self.amendments.is_empty() => Some("critical feedback cannot carry amendments"),
            FeedbackKind::Detailed if self.note.is_empty() => Some("detailed feedback needs a note"),
            _ => None,
        };
        match problem {
            Some(msg) => Err(FeedbackError::InvalidFeedback(msg.to_owned())),
            None => Ok(()),
        }
    }
}

/// Events to revoke for one piece of feedback, with the parameter overrides
/// the target's next attempt runs with.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RevocationPlan {
    pub revocations: BTreeSet<EventId>,
    pub amendments_by_event: BTreeMap<EventId, Params>,
    pub reason: String,
    pub target: Option<EventId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("feedback target `{0}` is neither an event nor a current artifact")]
    UnknownTarget(String),
    #[error("cannot revoke `{0}`: it has not started")]
    TargetPending(EventId),
    #[error("trace trigger references unknown event `{0}`")]
    TraceTriggerUnknown(EventId),
    #[error("invalid frequency policy: {0}")]
    InvalidPolicy(String),
}

/// Resolves a feedback target to its event: either an event id, or the
/// artifact id of a current Done record.
pub fn resolve_target(target: &str, report: &ProgressReport, graph: &ValidatedGraph) -> Result<EventId, FeedbackError> {
    if let Some(event) = graph.event(target) {
        return Ok(event.id.clone());
    }
    report
        .done
        .iter()
        .find(|(_, entry)| entry.artifact_id.as_str() == target)
        .map(|(id, _)| id.clone())
        .ok_or_else(|| FeedbackError::UnknownTarget(target.to_owned()))
}

/// Turns feedback into a revocation plan.
///
/// Approval is a no-op. Rejection revokes the target and every transitive
/// dependent that is Running or Done; dependents that never started are left
/// alone since their inputs will simply be recomputed.
pub fn interpret(
    feedback: &Feedback,
    report: &ProgressReport,
    graph: &ValidatedGraph,
) -> Result<RevocationPlan, FeedbackError> {
    feedback.validate()?;
    let target = resolve_target(&feedback.target, report, graph)?;
    let mut plan = RevocationPlan { reason: feedback.id.clone(), ..RevocationPlan::default() };
    if feedback.verdict == Verdict::Approve {
        return Ok(plan);
    }

    let started = |id: &EventId| report.running.contains_key(id) || report.done.contains_key(id);
    if !started(&target) {
        return Err(FeedbackError::TargetPending(target));
    }
    let dependents = transitive_dependents(graph, target.as_str()).expect("resolved target exists");
    plan.revocations = dependents.into_iter().filter(|id| started(id)).collect();
    plan.revocations.insert(target.clone());

    let mut overrides = Params::new();
    if matches!(feedback.kind, FeedbackKind::Critical | FeedbackKind::Detailed) {
        overrides.insert(DIRECTOR_NOTE.to_owned(), Value::String(feedback.note.clone()));
    }
    if feedback.kind == FeedbackKind::Detailed {
        overrides.extend(feedback.amendments.clone());
    }
    if !overrides.is_empty() {
        plan.amendments_by_event.insert(target.clone(), overrides);
    }
    plan.target = Some(target);
    Ok(plan)
}
