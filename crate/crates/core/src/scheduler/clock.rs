use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::crew::{Artifact, CancelToken, ExecContext, ExecutionRequest, Producer, Worker, WorkerError};
use crate::feedback::Feedback;
use crate::graph::EventId;
use crate::sim::{ClockError, Occurrence, VirtualClock};
use crate::Time;

/// One dispatched attempt.
pub struct Job {
    pub event_id: EventId,
    pub attempt: u32,
    pub duration: Time,
    pub worker: Arc<dyn Worker>,
    pub request: ExecutionRequest,
}

impl fmt::Debug for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Job")
            .field("event_id", &self.event_id)
            .field("attempt", &self.attempt)
            .field("duration", &self.duration)
            .finish()
    }
}

impl Job {
    fn run(self, ctx: &ExecContext) -> (EventId, u32, Result<Artifact, WorkerError>) {
        let result = self
            .worker
            .execute(&self.request, ctx)
            .map(|body| Artifact::new(Producer { event_id: self.event_id.clone(), attempt: self.attempt }, body));
        (self.event_id, self.attempt, result)
    }
}

/// Why a slice ended.
#[derive(Debug)]
pub enum Boundary {
    Completion {
        event_id: EventId,
        attempt: u32,
        result: Result<Artifact, WorkerError>,
    },
    /// A scripted feedback trigger time was reached.
    Trigger,
    /// Feedback delivered by a client while the run is live.
    Feedback(Feedback),
    /// The loop asked for another planning round.
    Replan,
}

/// Source of slice boundaries. The run loop owns it and is its only caller.
pub trait SliceClock: Send {
    fn now(&self) -> Time;

    fn dispatch(&mut self, job: Job) -> Result<(), ClockError>;

    /// Stops a running attempt. Returns once the attempt can no longer
    /// produce a completion.
    fn cancel(&mut self, event_id: &EventId, attempt: u32);

    fn schedule_trigger(&mut self, at: Time) -> Result<(), ClockError>;

    /// Requests a boundary at the current time.
    fn request_replan(&mut self);

    /// Waits for the next boundary. `idle` tells the clock that the run is
    /// complete, so it may hold a review window open for late feedback.
    /// `None` means no boundary will ever come.
    fn next_boundary(&mut self, idle: bool) -> Option<(Time, Boundary)>;
}

/// Discrete-event clock: workers execute inline at dispatch and their
/// completions are scheduled at dispatch time plus duration.
#[derive(Debug, Default)]
pub struct VirtualSliceClock {
    clock: VirtualClock,
    results: BTreeMap<(EventId, u32), Result<Artifact, WorkerError>>,
    feedback: BTreeMap<u64, Feedback>,
    seq: u64,
}

impl VirtualSliceClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delivers feedback at its `arrival_time`, as a live client would.
    pub fn inject_feedback(&mut self, feedback: Feedback) -> Result<(), ClockError> {
        let seq = self.seq;
        self.seq += 1;
        self.clock.schedule(feedback.arrival_time, Occurrence::Feedback { seq })?;
        self.feedback.insert(seq, feedback);
        Ok(())
    }
}

impl SliceClock for VirtualSliceClock {
    fn now(&self) -> Time {
        self.clock.now()
    }

    fn dispatch(&mut self, job: Job) -> Result<(), ClockError> {
        let at = self.clock.now() + job.duration;
        let ctx = ExecContext::virtual_time(job.duration);
        let (event_id, attempt, result) = job.run(&ctx);
        self.clock.schedule(at, Occurrence::Completion { event_id: event_id.clone(), attempt })?;
        self.results.insert((event_id, attempt), result);
        Ok(())
    }

    fn cancel(&mut self, event_id: &EventId, attempt: u32) {
        self.clock.cancel_matching(&Occurrence::Completion { event_id: event_id.clone(), attempt });
        self.results.remove(&(event_id.clone(), attempt));
    }

    fn schedule_trigger(&mut self, at: Time) -> Result<(), ClockError> {
        self.clock.schedule(at, Occurrence::Trigger).map(drop)
    }

    fn request_replan(&mut self) {
        let seq = self.seq;
        self.seq += 1;
        let now = self.clock.now();
        self.clock.schedule(now, Occurrence::Replan { seq }).expect("now is never in the past");
    }

    fn next_boundary(&mut self, _idle: bool) -> Option<(Time, Boundary)> {
        let (time, occurrence) = self.clock.pop()?;
        let boundary = match occurrence {
            Occurrence::Completion { event_id, attempt } => {
                let result = self.results.remove(&(event_id.clone(), attempt)).expect("dispatched job has a result");
                Boundary::Completion { event_id, attempt, result }
            }
            Occurrence::Trigger => Boundary::Trigger,
            Occurrence::Feedback { seq } => Boundary::Feedback(self.feedback.remove(&seq).expect("injected feedback")),
            Occurrence::Replan { .. } => Boundary::Replan,
        };
        Some((time, boundary))
    }
}

enum Message {
    Done { time: Time, event_id: EventId, attempt: u32, result: Result<Artifact, WorkerError> },
    Feedback { time: Time, feedback: Feedback },
}

impl Message {
    fn key(&self) -> (Time, u8, String, u32) {
        match self {
            Message::Done { time, event_id, attempt, .. } => (*time, 0, event_id.to_string(), *attempt),
            Message::Feedback { time, feedback } => (*time, 1, feedback.id.clone(), 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiveFeedbackError {
    #[error("run is closed")]
    RunClosed,
}

/// Handle for submitting feedback into a wall-clock run.
#[derive(Clone)]
pub struct LiveFeedback {
    tx: Sender<Message>,
    accepting: Arc<Mutex<bool>>,
    origin: Instant,
    tick: Duration,
}

impl fmt::Debug for LiveFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveFeedback").field("accepting", &*self.accepting.lock().unwrap()).finish()
    }
}

impl LiveFeedback {
    /// Queues feedback for the next boundary. Once this returns `Ok`, the
    /// feedback is guaranteed to be logged.
    pub fn submit(&self, mut feedback: Feedback) -> Result<(), LiveFeedbackError> {
        let accepting = self.accepting.lock().unwrap();
        if !*accepting {
            return Err(LiveFeedbackError::RunClosed);
        }
        let time = ticks(self.origin, self.tick);
        feedback.arrival_time = time;
        self.tx.send(Message::Feedback { time, feedback }).map_err(|_| LiveFeedbackError::RunClosed)
    }

    pub fn is_open(&self) -> bool {
        *self.accepting.lock().unwrap()
    }
}

fn ticks(origin: Instant, tick: Duration) -> Time {
    (origin.elapsed().as_nanos() / tick.as_nanos().max(1)) as Time
}

/// Real-time clock: workers run on their own threads and pace themselves at
/// one tick per `tick`. Messages are handled in timestamp order, ties broken
/// by event id.
pub struct WallSliceClock {
    origin: Instant,
    tick: Duration,
    review_window: Duration,
    tx: Sender<Message>,
    rx: Receiver<Message>,
    accepting: Arc<Mutex<bool>>,
    buffer: Vec<Message>,
    running: BTreeMap<(EventId, u32), CancelToken>,
    triggers: BTreeSet<Time>,
    replans: usize,
    last: Time,
}

impl fmt::Debug for WallSliceClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WallSliceClock")
            .field("tick", &self.tick)
            .field("running", &self.running.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl WallSliceClock {
    /// `tick` is the wall duration of one time unit. After the run
    /// completes, live feedback is accepted for `review_window`.
    pub fn new(tick: Duration, review_window: Duration) -> Self {
        let (tx, rx) = mpsc::channel();
        Self {
            origin: Instant::now(),
            tick,
            review_window,
            tx,
            rx,
            accepting: Arc::new(Mutex::new(true)),
            buffer: Vec::new(),
            running: BTreeMap::new(),
            triggers: BTreeSet::new(),
            replans: 0,
            last: 0,
        }
    }

    pub fn live_feedback(&self) -> LiveFeedback {
        LiveFeedback { tx: self.tx.clone(), accepting: self.accepting.clone(), origin: self.origin, tick: self.tick }
    }

    fn store(&mut self, message: Message) {
        if let Message::Done { event_id, attempt, .. } = &message {
            if self.running.remove(&(event_id.clone(), *attempt)).is_none() {
                return;
            }
        }
        self.buffer.push(message);
    }

    fn drain(&mut self) {
        while let Ok(message) = self.rx.try_recv() {
            self.store(message);
        }
    }

    fn pop_earliest(&mut self) -> Option<(Time, Boundary)> {
        let index = (0..self.buffer.len()).min_by_key(|i| self.buffer[*i].key())?;
        let message = self.buffer.swap_remove(index);
        let (time, boundary) = match message {
            Message::Done { time, event_id, attempt, result } => {
                (time, Boundary::Completion { event_id, attempt, result })
            }
            Message::Feedback { time, feedback } => (time, Boundary::Feedback(feedback)),
        };
        self.last = self.last.max(time);
        Some((self.last, boundary))
    }

    fn deadline_of(&self, at: Time) -> Instant {
        self.origin + self.tick * u32::try_from(at).unwrap_or(u32::MAX)
    }
}

impl SliceClock for WallSliceClock {
    fn now(&self) -> Time {
        ticks(self.origin, self.tick).max(self.last)
    }

    fn dispatch(&mut self, job: Job) -> Result<(), ClockError> {
        let cancel = CancelToken::new();
        self.running.insert((job.event_id.clone(), job.attempt), cancel.clone());
        let ctx = ExecContext { cancel, pace: Some(self.tick), duration: job.duration };
        let tx = self.tx.clone();
        let (origin, tick) = (self.origin, self.tick);
        std::thread::spawn(move || {
            let (event_id, attempt, result) = job.run(&ctx);
            let _ = tx.send(Message::Done { time: ticks(origin, tick), event_id, attempt, result });
        });
        Ok(())
    }

    fn cancel(&mut self, event_id: &EventId, attempt: u32) {
        let key = (event_id.clone(), attempt);
        let Some(token) = self.running.remove(&key) else {
            self.buffer.retain(
                |m| !matches!(m, Message::Done { event_id: e, attempt: a, .. } if e == event_id && *a == attempt),
            );
            return;
        };
        token.cancel();
        // Wait for the worker to acknowledge so its output can never land.
        while let Ok(message) = self.rx.recv() {
            match message {
                Message::Done { event_id: e, attempt: a, .. } if e == key.0 && a == key.1 => break,
                other => self.store(other),
            }
        }
    }

    fn schedule_trigger(&mut self, at: Time) -> Result<(), ClockError> {
        self.triggers.insert(at);
        Ok(())
    }

    fn request_replan(&mut self) {
        self.replans += 1;
    }

    fn next_boundary(&mut self, idle: bool) -> Option<(Time, Boundary)> {
        if self.replans > 0 {
            self.replans -= 1;
            self.last = self.now();
            return Some((self.last, Boundary::Replan));
        }
        loop {
            self.drain();
            let trigger = self.triggers.first().copied();
            if let Some(at) = trigger {
                if ticks(self.origin, self.tick) >= at && !self.buffer.iter().any(|m| m.key().0 < at) {
                    self.triggers.pop_first();
                    self.last = self.last.max(at);
                    return Some((self.last, Boundary::Trigger));
                }
            }
            if let Some(boundary) = self.pop_earliest() {
                return Some(boundary);
            }
            if !self.running.is_empty() || trigger.is_some() {
                let wait = trigger.map_or(Duration::from_secs(3600), |at| {
                    self.deadline_of(at).saturating_duration_since(Instant::now())
                });
                match self.rx.recv_timeout(wait) {
                    Ok(message) => self.store(message),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return None,
                }
                continue;
            }
            if !idle {
                // Nothing running and the run is incomplete: only feedback
                // that already arrived could help, and there is none.
                return None;
            }
            match self.rx.recv_timeout(self.review_window) {
                Ok(message) => {
                    self.store(message);
                    continue;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return None,
            }
            let accepting = self.accepting.clone();
            let mut accepting = accepting.lock().unwrap();
            self.drain();
            if self.buffer.is_empty() {
                *accepting = false;
                return None;
            }
            drop(accepting);
        }
    }
}
