use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{EventId, Params, PipelineFileError, ValidatedGraph};
use crate::Time;

use super::{EligiblePoints, Feedback, FeedbackError, FeedbackKind, FrequencyPolicy, Verdict};

/// Supplies feedback to a run.
///
/// The run loop asks the source at every completion boundary and at every
/// time trigger the source advertises. Feedback returned from
/// `on_completion` is reviewed in that same boundary.
pub trait FeedbackSource: Send {
    fn on_completion(&mut self, event: &EventId, now: Time, run_complete: bool) -> Vec<Feedback>;

    /// Distinct times at which `on_time` should be called.
    fn trigger_times(&self) -> Vec<Time> {
        Vec::new()
    }

    fn next_trigger(&self) -> Option<Time> {
        None
    }

    fn on_time(&mut self, _now: Time, _run_complete: bool) -> Vec<Feedback> {
        Vec::new()
    }

    /// True once the source will never emit again.
    fn is_closed(&self) -> bool;
}

/// A source that never comments.
#[derive(Debug, Clone, Copy, Default)]
pub struct Silent;

impl FeedbackSource for Silent {
    fn on_completion(&mut self, _event: &EventId, _now: Time, _run_complete: bool) -> Vec<Feedback> {
        Vec::new()
    }

    fn is_closed(&self) -> bool {
        true
    }
}

/// When a scripted comment fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// At the first completion of this event.
    After(EventId),
    /// At this time.
    At(Time),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceItem {
    pub trigger: Trigger,
    pub target: String,
    pub kind: FeedbackKind,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    #[serde(default, skip_serializing_if = "Params::is_empty")]
    pub amendments: Params,
}

/// A feedback trace file: `[[feedback]]` tables in TOML, or
/// `{"feedback": [...]}` in JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTrace {
    #[serde(default)]
    pub feedback: Vec<TraceItem>,
}

impl FeedbackTrace {
    pub fn new(items: Vec<TraceItem>) -> Self {
        Self { feedback: items }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, PipelineFileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| PipelineFileError::Io { path: path.display().to_string(), source })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_json_str(&text).or_else(|_| Self::from_toml_str(&text)),
        }
    }
}

/// Replays a fixed trace under a frequency policy.
#[derive(Debug, Clone)]
pub struct ScriptedFeedback {
    items: Vec<TraceItem>,
    fired: Vec<bool>,
    deferred: BTreeSet<usize>,
    points: EligiblePoints,
    milestones: BTreeSet<EventId>,
}

/// Builds a scripted source. Only the first `policy.max_interactions` items,
/// in trace order, can ever be emitted.
pub fn scripted_feedback_source(
    trace: &FeedbackTrace,
    policy: FrequencyPolicy,
    graph: &ValidatedGraph,
) -> Result<ScriptedFeedback, FeedbackError> {
    for item in &trace.feedback {
        if let Trigger::After(event) = &item.trigger {
            if !graph.contains(event.as_str()) {
                return Err(FeedbackError::TraceTriggerUnknown(event.clone()));
            }
        }
        item_feedback(0, item, 0).validate()?;
    }
    let cap = policy.max_interactions.map_or(trace.feedback.len(), |m| (m as usize).min(trace.feedback.len()));
    let items: Vec<TraceItem> = trace.feedback[..cap].to_vec();
    let milestones = graph
        .events()
        .iter()
        .filter(|e| {
            let fan_out = graph.dependents(e.id.as_str()).count();
            fan_out == 0 || fan_out >= 2
        })
        .map(|e| e.id.clone())
        .collect();
    Ok(ScriptedFeedback {
        fired: vec![false; items.len()],
        items,
        deferred: BTreeSet::new(),
        points: policy.eligible_points,
        milestones,
    })
}

fn item_feedback(index: usize, item: &TraceItem, now: Time) -> Feedback {
    Feedback {
        id: format!("fb-{index}"),
        arrival_time: now,
        target: item.target.clone(),
        kind: item.kind,
        verdict: item.verdict,
        note: item.note.clone(),
        amendments: item.amendments.clone(),
    }
}

impl ScriptedFeedback {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn release(&mut self, fired: Vec<usize>, now: Time, eligible: bool) -> Vec<Feedback> {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        if eligible {
            out.extend(std::mem::take(&mut self.deferred));
            out.extend(fired);
        } else {
            self.deferred.extend(fired);
        }
        out.into_iter().map(|i| item_feedback(i, &self.items[i], now)).collect()
    }
}

impl FeedbackSource for ScriptedFeedback {
    fn on_completion(&mut self, event: &EventId, now: Time, run_complete: bool) -> Vec<Feedback> {
        let mut fired = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            if !self.fired[i] && item.trigger == Trigger::After(event.clone()) {
                self.fired[i] = true;
                fired.push(i);
            }
        }
        let eligible = run_complete
            || match self.points {
                EligiblePoints::AfterEachEvent => true,
                EligiblePoints::AfterMilestones => self.milestones.contains(event),
                EligiblePoints::FinalOnly => false,
            };
        self.release(fired, now, eligible)
    }

    fn trigger_times(&self) -> Vec<Time> {
        let times: BTreeSet<Time> = self
            .items
            .iter()
            .filter_map(|item| match item.trigger {
                Trigger::At(t) => Some(t),
                Trigger::After(_) => None,
            })
            .collect();
        times.into_iter().collect()
    }

    fn next_trigger(&self) -> Option<Time> {
        self.items
            .iter()
            .zip(&self.fired)
            .filter(|(_, fired)| !**fired)
            .filter_map(|(item, _)| match item.trigger {
                Trigger::At(t) => Some(t),
                Trigger::After(_) => None,
            })
            .min()
    }

    fn on_time(&mut self, now: Time, run_complete: bool) -> Vec<Feedback> {
        let mut fired = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            if let Trigger::At(t) = item.trigger {
                if !self.fired[i] && t <= now {
                    self.fired[i] = true;
                    fired.push(i);
                }
            }
        }
        let eligible = run_complete || self.points == EligiblePoints::AfterEachEvent;
        if fired.is_empty() && !run_complete {
            return Vec::new();
        }
        self.release(fired, now, eligible)
    }

    fn is_closed(&self) -> bool {
        self.deferred.is_empty() && self.fired.iter().all(|f| *f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crew::film_pipeline_preset;
    use crate::feedback::PolicyName;
    use crate::graph::validate_pipeline;

    fn item(trigger: Trigger, target: &str) -> TraceItem {
        TraceItem {
            trigger,
            target: target.into(),
            kind: FeedbackKind::YesNo,
            verdict: Verdict::Reject,
            note: String::new(),
            amendments: Params::new(),
        }
    }

    fn three_items() -> FeedbackTrace {
        FeedbackTrace::new(vec![
            item(Trigger::After("script".into()), "script"),
            item(Trigger::After("dialogue".into()), "dialogue"),
            item(Trigger::At(50), "art"),
        ])
    }

    fn drain(source: &mut ScriptedFeedback) -> Vec<String> {
        let mut out = Vec::new();
        for id in ["script", "art", "dialogue", "action", "voiceover"] {
            out.extend(source.on_completion(&id.into(), 10, false).into_iter().map(|f| f.id));
        }
        out.extend(source.on_time(50, false).into_iter().map(|f| f.id));
        out.extend(source.on_completion(&"post".into(), 60, true).into_iter().map(|f| f.id));
        out
    }

    #[test]
    fn none_policy_emits_nothing() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let mut s =
            scripted_feedback_source(&three_items(), FrequencyPolicy::preset(PolicyName::None), &graph).unwrap();
        assert!(drain(&mut s).is_empty());
        assert!(s.is_closed());
    }

    #[test]
    fn low_policy_caps_to_first_item() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let mut s = scripted_feedback_source(&three_items(), FrequencyPolicy::preset(PolicyName::Low), &graph).unwrap();
        assert_eq!(drain(&mut s), ["fb-0"]);
    }

    #[test]
    fn no_limits_emits_at_the_trigger() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let trace = FeedbackTrace::new(vec![item(Trigger::After("dialogue".into()), "dialogue")]);
        let mut s = scripted_feedback_source(&trace, FrequencyPolicy::no_limits(), &graph).unwrap();
        assert!(s.on_completion(&"script".into(), 10, false).is_empty());
        let out = s.on_completion(&"dialogue".into(), 25, false);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].target.as_str(), out[0].arrival_time), ("dialogue", 25));
        // A second completion of the same event does not fire again.
        assert!(s.on_completion(&"dialogue".into(), 40, false).is_empty());
        assert!(s.is_closed());
    }

    #[test]
    fn milestone_policy_defers_to_the_next_milestone() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let trace = FeedbackTrace::new(vec![item(Trigger::After("dialogue".into()), "dialogue")]);
        let mut s =
            scripted_feedback_source(&trace, FrequencyPolicy::preset(PolicyName::Intermediate), &graph).unwrap();
        assert!(s.on_completion(&"dialogue".into(), 25, false).is_empty());
        assert!(!s.is_closed());
        // art has two dependents (action, post), so it is a milestone.
        let out = s.on_completion(&"art".into(), 30, false);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].arrival_time, 30);
    }

    #[test]
    fn final_only_waits_for_completion() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let trace = three_items();
        let policy = FrequencyPolicy::new(PolicyName::Intermediate, Some(3), EligiblePoints::FinalOnly).unwrap();
        let mut s = scripted_feedback_source(&trace, policy, &graph).unwrap();
        assert!(s.on_completion(&"script".into(), 10, false).is_empty());
        assert!(s.on_time(50, false).is_empty());
        let out = s.on_completion(&"post".into(), 68, true);
        let ids: Vec<_> = out.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["fb-0", "fb-2"]);
    }

    #[test]
    fn unknown_trigger_is_rejected() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let trace = FeedbackTrace::new(vec![item(Trigger::After("ghost".into()), "script")]);
        assert_eq!(
            scripted_feedback_source(&trace, FrequencyPolicy::no_limits(), &graph).unwrap_err(),
            FeedbackError::TraceTriggerUnknown("ghost".into())
        );
    }

    #[test]
    fn trace_file_formats() {
        let toml_text = r#"
            [[feedback]]
            trigger = { after = "dialogue" }
            target = "dialogue"
            kind = "detailed"
            verdict = "reject"
            note = "improve the fifth act"
            amendments = { tone = "tender" }

            [[feedback]]
            trigger = { at = 12 }
            target = "script"
            kind = "yes_no"
            verdict = "approve"
        "#;
        let trace = FeedbackTrace::from_toml_str(toml_text).unwrap();
        assert_eq!(trace.feedback.len(), 2);
        assert_eq!(trace.feedback[1].trigger, Trigger::At(12));
        let json = serde_json::to_string(&trace).unwrap();
        assert_eq!(FeedbackTrace::from_json_str(&json).unwrap(), trace);
    }
}
