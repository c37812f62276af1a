use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{interpret, Feedback, FeedbackError};
use crate::graph::{ready_set, EventId, Params, ValidatedGraph};

use super::report::apply_decision;
use super::ProgressReport;

/// Dispatch discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every ready event starts at once.
    #[default]
    Parallel,
    /// At most one event runs; ready events start in topological order.
    Serial,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "serial" => Ok(Mode::Serial),
            other => Err(format!("unknown mode `{other}` (expected parallel or serial)")),
        }
    }
}

/// What the director does at one slice boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub enqueue: BTreeSet<EventId>,
    pub revoke: BTreeSet<EventId>,
    pub wait: bool,
    /// Feedback id behind `revoke`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// The event the feedback targeted; other revocations are cascades.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<EventId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub amendments: BTreeMap<EventId, Params>,
}

impl ScheduleDecision {
    pub fn waiting() -> Self {
        Self { wait: true, ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.enqueue.is_empty() && self.revoke.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("progress report references unknown event `{0}`")]
    InconsistentReport(EventId),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

/// Plans one slice in parallel mode.
pub fn plan(
    report: &ProgressReport,
    feedback: Option<&Feedback>,
    graph: &ValidatedGraph,
) -> Result<ScheduleDecision, PlanError> {
    plan_in_mode(Mode::Parallel, report, feedback, graph)
}

/// Plans one slice: revocations from feedback first, then the ready set of
/// the post-revocation report. Events revoked here re-enter the queue at a
/// later boundary.
pub fn plan_in_mode(
    mode: Mode,
    report: &ProgressReport,
    feedback: Option<&Feedback>,
    graph: &ValidatedGraph,
) -> Result<ScheduleDecision, PlanError> {
    check_consistent(report, graph)?;

    let mut decision = ScheduleDecision::default();
    let mut post = report.clone();
    if let Some(feedback) = feedback {
        let revocation = interpret(feedback, report, graph)?;
        decision.revoke = revocation.revocations;
        decision.amendments = revocation.amendments_by_event;
        if !decision.revoke.is_empty() {
            decision.reason = Some(revocation.reason);
            decision.origin = revocation.target;
            apply_decision(&mut post, &decision).expect("interpret only revokes started events");
        }
    }

    let mut ready = ready_set(graph, &post);
    ready.retain(|id| !decision.revoke.contains(id));
    decision.enqueue = match mode {
        Mode::Parallel => ready,
        Mode::Serial if post.running.is_empty() => {
            graph.topo_order().find(|id| ready.contains(*id)).cloned().into_iter().collect()
        }
        Mode::Serial => BTreeSet::new(),
    };
    decision.wait = decision.is_empty() && !post.is_complete(graph);
    Ok(decision)
}

fn check_consistent(report: &ProgressReport, graph: &ValidatedGraph) -> Result<(), PlanError> {
    let ids = report.running.keys().chain(report.done.keys()).chain(report.attempts.keys());
    for id in ids {
        if !graph.contains(id.as_str()) {
            return Err(PlanError::InconsistentReport(id.clone()));
        }
    }
    Ok(())
}
