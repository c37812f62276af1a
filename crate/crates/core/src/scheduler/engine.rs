use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::clock::{Boundary, Job, SliceClock, VirtualSliceClock};
use super::plan::{plan_in_mode, Mode, PlanError, ScheduleDecision};
use super::report::{
    apply_completion, apply_decision, begin_slice, AdvanceError, Completion, CompletionOutcome, ProgressReport,
};
use crate::crew::{build_request, Artifact, Worker, WorkerError, WorkerRegistry};
use crate::feedback::{Feedback, FeedbackSource};
use crate::graph::{Durations, EventId, GraphError, Params, ValidatedGraph};
use crate::sim::ClockError;
use crate::store::{EventLogRecord, LogSink, RecordKind, RunLog, RunStatus, StoreError};
use crate::{Time, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    /// Failed attempts allowed per event before the run fails.
    pub retry_budget: u32,
    /// Per-event duration overrides.
    pub durations: Durations,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            mode: Mode::Parallel,
            seed: DEFAULT_SEED,
            retry_budget: 3,
            durations: Durations::new(),
        }
    }
}

impl RunConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn with_durations(mut self, durations: Durations) -> Self {
        self.durations = durations;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    pub final_report: ProgressReport,
    /// Time at which every event was last done.
    pub makespan: Time,
    pub slice_count: u64,
    /// Current artifact of every done event.
    pub artifacts: BTreeMap<EventId, Artifact>,
    /// Attempts started per event.
    pub attempts: BTreeMap<EventId, u32>,
    pub revocations: usize,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no worker registered for role `{0}`")]
    MissingWorker(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Advance(#[from] AdvanceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error("`{event_id}` failed at attempt {attempt}: {error}")]
    WorkerFailure { event_id: EventId, attempt: u32, error: WorkerError, partial: Box<RunResult> },
    #[error("deadlock at time {time}: nothing running, nothing ready, {} events left", remaining.len())]
    Deadlock { time: Time, remaining: Vec<EventId> },
}

/// Runs `graph` on the virtual clock and returns the result with its log.
pub fn simulate(
    graph: &ValidatedGraph,
    workers: &WorkerRegistry,
    feedback: &mut dyn FeedbackSource,
    config: &RunConfig,
) -> Result<(RunResult, RunLog), RunError> {
    let mut log = RunLog::new();
    let mut clock = VirtualSliceClock::new();
    let result = run(graph, workers, feedback, &mut clock, config, &mut log)?;
    Ok((result, log))
}

/// The scheduling loop: plan, dispatch, wait for a boundary, update the
/// report, until every event is done and no more feedback can arrive.
pub fn run(
    graph: &ValidatedGraph,
    workers: &WorkerRegistry,
    feedback: &mut dyn FeedbackSource,
    clock: &mut dyn SliceClock,
    config: &RunConfig,
    sink: &mut dyn LogSink,
) -> Result<RunResult, RunError> {
    let mut staff = BTreeMap::new();
    for event in graph.events() {
        let worker = workers.get(&event.role).ok_or_else(|| RunError::MissingWorker(event.role.clone()))?;
        staff.insert(event.id.clone(), worker.clone());
    }
    let mut engine = Engine {
        graph,
        config,
        staff,
        sink,
        seq: 0,
        report: ProgressReport { time: clock.now(), ..Default::default() },
        artifacts: BTreeMap::new(),
        overlays: BTreeMap::new(),
        attempts: BTreeMap::new(),
        completed_at: None,
        closed: false,
    };
    engine.start()?;
    let outcome = drive(&mut engine, feedback, clock);
    if outcome.is_err() && !engine.closed {
        // Close the log so readers see the run end.
        let _ = engine.finish(RunStatus::Failed);
    }
    outcome
}

fn drive(
    engine: &mut Engine<'_>,
    feedback: &mut dyn FeedbackSource,
    clock: &mut dyn SliceClock,
) -> Result<RunResult, RunError> {
    for at in feedback.trigger_times() {
        clock.schedule_trigger(at)?;
    }
    engine.slice(clock, Vec::new())?;

    loop {
        let idle = engine.is_complete() && engine.report.running.is_empty();
        let Some((time, boundary)) = clock.next_boundary(idle) else { break };
        let mut reviews = Vec::new();
        match boundary {
            Boundary::Completion { event_id, attempt, result } => {
                begin_slice(&mut engine.report, time)?;
                match engine.complete(&event_id, attempt, time, result)? {
                    Some(failure) => return Err(engine.fail(failure)?),
                    None => reviews = feedback.on_completion(&event_id, time, engine.is_complete()),
                }
            }
            Boundary::Trigger => {
                reviews = feedback.on_time(time, engine.is_complete());
                if reviews.is_empty() {
                    continue;
                }
                begin_slice(&mut engine.report, time)?;
            }
            Boundary::Feedback(fb) => {
                begin_slice(&mut engine.report, time)?;
                reviews.push(fb);
            }
            Boundary::Replan => begin_slice(&mut engine.report, time)?,
        }
        engine.slice(clock, reviews)?;
    }

    if !engine.is_complete() {
        let remaining = engine
            .graph
            .events()
            .iter()
            .map(|e| e.id.clone())
            .filter(|id| !engine.report.done.contains_key(id))
            .collect();
        engine.finish(RunStatus::Failed)?;
        return Err(RunError::Deadlock { time: engine.report.time, remaining });
    }
    engine.finish(RunStatus::Completed)?;
    Ok(engine.result(RunStatus::Completed))
}

struct Failure {
    event_id: EventId,
    attempt: u32,
    error: WorkerError,
}

struct Engine<'a> {
    graph: &'a ValidatedGraph,
    config: &'a RunConfig,
    staff: BTreeMap<EventId, Arc<dyn Worker>>,
    sink: &'a mut dyn LogSink,
    seq: u64,
    report: ProgressReport,
    artifacts: BTreeMap<crate::crew::ArtifactId, Artifact>,
    /// Accumulated feedback amendments per event.
    overlays: BTreeMap<EventId, Params>,
    attempts: BTreeMap<EventId, u32>,
    completed_at: Option<Time>,
    closed: bool,
}

impl Engine<'_> {
    fn emit(&mut self, kind: RecordKind, event: Option<(&EventId, u32)>, payload: Value) -> Result<(), RunError> {
        let record = EventLogRecord {
            seq: self.seq,
            time: self.report.time,
            slice: self.report.slice_index,
            kind,
            event_id: event.map(|(e, _)| e.clone()),
            attempt: event.map(|(_, a)| a),
            payload,
        };
        self.sink.append(record)?;
        self.seq += 1;
        Ok(())
    }

    fn start(&mut self) -> Result<(), RunError> {
        let events: Vec<Value> =
            self.graph.events().iter().map(|e| json!({ "id": e.id, "role": e.role, "deps": e.dependencies })).collect();
        let payload = json!({
            "run_id": self.config.run_id,
            "pipeline": self.graph.name(),
            "seed": self.config.seed,
            "mode": self.config.mode,
            "events": events,
        });
        self.emit(RecordKind::Start, None, payload)
    }

    fn is_complete(&self) -> bool {
        self.report.is_complete(self.graph)
    }

    /// Folds one worker result into the report and logs it. Returns the
    /// failure if the retry budget is spent.
    fn complete(
        &mut self,
        event_id: &EventId,
        attempt: u32,
        time: Time,
        result: Result<Artifact, WorkerError>,
    ) -> Result<Option<Failure>, RunError> {
        match result {
            Ok(artifact) => {
                let completion = Completion {
                    event_id: event_id.clone(),
                    attempt,
                    finish: time,
                    outcome: CompletionOutcome::Done { artifact_id: artifact.id.clone() },
                };
                apply_completion(&mut self.report, &completion)?;
                self.sink.put_artifact(&artifact)?;
                let payload = json!({
                    "artifact_id": artifact.id,
                    "content_hash": artifact.content_hash,
                    "kind": artifact.kind,
                });
                self.artifacts.insert(artifact.id.clone(), artifact);
                self.emit(RecordKind::Complete, Some((event_id, attempt)), payload)?;
                if self.is_complete() {
                    self.completed_at = Some(time);
                }
                Ok(None)
            }
            Err(error) => {
                let completion = Completion {
                    event_id: event_id.clone(),
                    attempt,
                    finish: time,
                    outcome: CompletionOutcome::Failed { error: error.to_string() },
                };
                apply_completion(&mut self.report, &completion)?;
                self.emit(RecordKind::Fail, Some((event_id, attempt)), json!({ "error": error.to_string() }))?;
                let retryable = !matches!(error, WorkerError::Adapter { retryable: false, .. });
                let spent = self.report.failures_of(event_id.as_str()) >= self.config.retry_budget as usize;
                Ok((spent || !retryable).then(|| Failure { event_id: event_id.clone(), attempt, error }))
            }
        }
    }

    /// Reviews feedback, revokes, then enqueues or waits.
    fn slice(&mut self, clock: &mut dyn SliceClock, reviews: Vec<Feedback>) -> Result<(), RunError> {
        let mut revokes: Vec<(ScheduleDecision, Vec<(EventId, u32)>)> = Vec::new();
        let mut revoked_now = BTreeSet::new();
        for fb in reviews {
            match plan_in_mode(self.config.mode, &self.report, Some(&fb), self.graph) {
                Ok(decision) => {
                    self.emit(RecordKind::Feedback, None, feedback_payload(&fb, true, None))?;
                    if decision.revoke.is_empty() {
                        continue;
                    }
                    let attempts: Vec<(EventId, u32)> = decision
                        .revoke
                        .iter()
                        .map(|id| {
                            let attempt = self.report.running.get(id).map(|r| r.attempt);
                            if let Some(attempt) = attempt {
                                clock.cancel(id, attempt);
                            }
                            (id.clone(), attempt.unwrap_or_else(|| self.report.done[id].attempt))
                        })
                        .collect();
                    let revocation = ScheduleDecision { enqueue: BTreeSet::new(), ..decision.clone() };
                    apply_decision(&mut self.report, &revocation)?;
                    for (id, amendments) in &decision.amendments {
                        self.overlays.entry(id.clone()).or_default().extend(amendments.clone());
                    }
                    revoked_now.extend(decision.revoke.iter().cloned());
                    revokes.push((revocation, attempts));
                }
                Err(PlanError::Feedback(error)) => {
                    self.emit(RecordKind::Feedback, None, feedback_payload(&fb, false, Some(error.to_string())))?;
                }
                Err(other) => return Err(other.into()),
            }
        }

        let mut decision = plan_in_mode(self.config.mode, &self.report, None, self.graph)?;
        decision.enqueue.retain(|id| !revoked_now.contains(id));
        for (revocation, attempts) in &revokes {
            for (id, attempt) in attempts {
                let payload = json!({
                    "reason": revocation.reason,
                    "target": revocation.origin,
                    "cascade": revocation.origin.as_ref() != Some(id),
                });
                self.emit(RecordKind::Revoke, Some((id, *attempt)), payload)?;
            }
        }
        if !revokes.is_empty() && self.completed_at.is_some() && !self.is_complete() {
            // Reopened by late feedback: the run must complete again.
            self.completed_at = None;
        }

        let enqueue = ScheduleDecision { enqueue: decision.enqueue.clone(), ..Default::default() };
        apply_decision(&mut self.report, &enqueue)?;
        for id in &decision.enqueue {
            let attempt = self.report.running[id].attempt;
            *self.attempts.entry(id.clone()).or_default() += 1;
            let overlay = self.overlays.get(id).cloned().unwrap_or_default();
            let payload = if overlay.is_empty() { json!({}) } else { json!({ "amendments": overlay }) };
            self.emit(RecordKind::Enqueue, Some((id, attempt)), payload)?;
            self.dispatch(clock, id, attempt, &overlay)?;
        }
        if revokes.is_empty() && decision.enqueue.is_empty() && !self.is_complete() {
            self.emit(RecordKind::Wait, None, json!({ "running": self.report.running.keys().collect::<Vec<_>>() }))?;
        }
        self.sink.snapshot(&self.report)?;
        if !revokes.is_empty() {
            clock.request_replan();
        }
        Ok(())
    }

    fn dispatch(
        &mut self,
        clock: &mut dyn SliceClock,
        id: &EventId,
        attempt: u32,
        overlay: &Params,
    ) -> Result<(), RunError> {
        let event = self.graph.event(id.as_str()).expect("planned events exist");
        let inputs =
            event.dependencies.iter().map(|dep| self.artifacts[&self.report.done[dep].artifact_id].clone()).collect();
        let request =
            build_request(event, attempt, overlay, inputs, self.config.seed).expect("planned events have every input");
        let worker = self.staff[id].clone();
        let duration =
            self.config.durations.get(id).copied().or(event.duration).unwrap_or_else(|| worker.duration(&request));
        clock.dispatch(Job { event_id: id.clone(), attempt, duration, worker, request })?;
        Ok(())
    }

    fn finish(&mut self, status: RunStatus) -> Result<(), RunError> {
        let payload = json!({
            "status": status,
            "makespan": self.makespan(),
            "slices": self.report.slice_index + 1,
        });
        self.emit(RecordKind::Finish, None, payload)?;
        self.closed = true;
        Ok(())
    }

    fn fail(&mut self, failure: Failure) -> Result<RunError, RunError> {
        self.finish(RunStatus::Failed)?;
        Ok(RunError::WorkerFailure {
            event_id: failure.event_id,
            attempt: failure.attempt,
            error: failure.error,
            partial: Box::new(self.result(RunStatus::Failed)),
        })
    }

    fn makespan(&self) -> Time {
        self.completed_at.unwrap_or(self.report.time)
    }

    fn result(&self, status: RunStatus) -> RunResult {
        RunResult {
            run_id: self.config.run_id.clone(),
            status,
            final_report: self.report.clone(),
            makespan: self.makespan(),
            slice_count: self.report.slice_index + 1,
            artifacts: self
                .report
                .done
                .iter()
                .map(|(id, done)| (id.clone(), self.artifacts[&done.artifact_id].clone()))
                .collect(),
            attempts: self.attempts.clone(),
            revocations: self.report.revoked_history.len(),
        }
    }
}

fn feedback_payload(fb: &Feedback, accepted: bool, error: Option<String>) -> Value {
    let mut payload = json!({
        "feedback_id": fb.id,
        "target": fb.target,
        "kind": fb.kind,
        "verdict": fb.verdict,
        "note": fb.note,
        "amendments": fb.amendments,
        "arrival_time": fb.arrival_time,
        "accepted": accepted,
    });
    if let Some(error) = error {
        payload["error"] = Value::String(error);
    }
    payload
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crew::film_pipeline_preset;
    use crate::feedback::{
        scripted_feedback_source, FeedbackKind, FeedbackTrace, FrequencyPolicy, Silent, TraceItem, Trigger, Verdict,
    };
    use crate::graph::validate_pipeline;
    use crate::store::replay;

    fn film() -> (ValidatedGraph, WorkerRegistry) {
        let def = film_pipeline_preset();
        (validate_pipeline(&def).unwrap(), WorkerRegistry::mock_for(&def))
    }

    #[test]
    fn film_makespans() {
        let (graph, workers) = film();
        let (par, log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
        assert_eq!(par.makespan, 68);
        assert_eq!(par.slice_count, 7);
        assert_eq!(par.status, RunStatus::Completed);
        assert_eq!(log.count(RecordKind::Complete), 6);
        let (ser, _) = simulate(&graph, &workers, &mut Silent, &RunConfig::default().with_mode(Mode::Serial)).unwrap();
        assert_eq!(ser.makespan, 95);
    }

    #[test]
    fn log_replays_to_the_final_report() {
        let (graph, workers) = film();
        let (result, log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
        let state = replay(log.records()).unwrap();
        assert_eq!(state.latest_report, result.final_report);
        assert_eq!(state.makespan, Some(68));
        assert_eq!(state.status, RunStatus::Completed);
    }

    fn dialogue_reject() -> FeedbackTrace {
        FeedbackTrace::new(vec![TraceItem {
            trigger: Trigger::After("dialogue".into()),
            target: "dialogue".into(),
            kind: FeedbackKind::Detailed,
            verdict: Verdict::Reject,
            note: "improve the fifth act".into(),
            amendments: Params::new(),
        }])
    }

    #[test]
    fn rejected_dialogue_is_redone_once() {
        let (graph, workers) = film();
        let mut source = scripted_feedback_source(&dialogue_reject(), FrequencyPolicy::no_limits(), &graph).unwrap();
        let (result, log) = simulate(&graph, &workers, &mut source, &RunConfig::default()).unwrap();
        assert_eq!(log.count(RecordKind::Revoke), 1);
        assert_eq!(result.attempts[&EventId::from("dialogue")], 2);
        assert_eq!(result.final_report.done["dialogue"].attempt, 2);
        assert_eq!(result.makespan, 68);
        assert_eq!(replay(log.records()).unwrap().latest_report, result.final_report);
    }

    #[test]
    fn missing_worker_is_reported() {
        let (graph, _) = film();
        let err = simulate(&graph, &WorkerRegistry::new(), &mut Silent, &RunConfig::default()).unwrap_err();
        assert!(matches!(err, RunError::MissingWorker(_)));
    }

    struct Flaky(u32);

    impl Worker for Flaky {
        fn execute(
            &self,
            req: &crate::crew::ExecutionRequest,
            _: &crate::crew::ExecContext,
        ) -> Result<crate::crew::ArtifactBody, WorkerError> {
            if req.attempt <= self.0 {
                Err(WorkerError::Failed("transient".into()))
            } else {
                Ok(crate::crew::ArtifactBody {
                    kind: crate::crew::ArtifactKind::Generic,
                    content: json!({"ok": req.attempt}),
                })
            }
        }
    }

    #[test]
    fn retries_then_gives_up() {
        let def =
            crate::graph::PipelineDef::new("one", vec![crate::graph::EventSpec::new("a", "flaky").with_duration(2)]);
        let graph = validate_pipeline(&def).unwrap();
        let mut workers = WorkerRegistry::new();
        workers.register("flaky", Arc::new(Flaky(2)));
        let (result, log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
        assert_eq!(result.attempts[&EventId::from("a")], 3);
        assert_eq!(result.makespan, 6);
        assert_eq!(log.count(RecordKind::Fail), 2);
        assert_eq!(replay(log.records()).unwrap().latest_report, result.final_report);

        let mut workers = WorkerRegistry::new();
        workers.register("flaky", Arc::new(Flaky(10)));
        match simulate(&graph, &workers, &mut Silent, &RunConfig::default()) {
            Err(RunError::WorkerFailure { attempt, partial, .. }) => {
                assert_eq!(attempt, 3);
                assert_eq!(partial.status, RunStatus::Failed);
                assert_eq!(partial.final_report.failures.len(), 3);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
