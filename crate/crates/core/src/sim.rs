//! Discrete-event virtual clock.
//!
//! Occurrences are kept in a priority queue ordered by fire time, then by the
//! occurrence itself: completions before feedback, and simultaneous
//! completions by event id. Ordering is therefore a pure function of what was
//! scheduled, never of insertion order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::EventId;
use crate::Time;

/// Something that happens at an instant and ends a time slice.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Occurrence {
    Completion {
        event_id: EventId,
        attempt: u32,
    },
    /// A scripted feedback trigger time.
    Trigger,
    /// Feedback submitted while the run is live, in arrival order.
    Feedback {
        seq: u64,
    },
    /// A boundary requested by the run loop itself.
    Replan {
        seq: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccurrenceId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("cannot schedule at {at}, clock is already at {now}")]
    PastTime { at: Time, now: Time },
}

#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Time,
    next_id: u64,
    pending: BTreeSet<(Time, Occurrence, OccurrenceId)>,
    index: BTreeMap<OccurrenceId, (Time, Occurrence)>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn schedule(&mut self, at: Time, occurrence: Occurrence) -> Result<OccurrenceId, ClockError> {
        if at < self.now {
            return Err(ClockError::PastTime { at, now: self.now });
        }
        let id = OccurrenceId(self.next_id);
        self.next_id += 1;
        self.pending.insert((at, occurrence.clone(), id));
        self.index.insert(id, (at, occurrence));
        Ok(id)
    }

    /// Pops the earliest occurrence and moves the clock to it. `None` means
    /// the simulation has nothing left to do.
    pub fn pop(&mut self) -> Option<(Time, Occurrence)> {
        let (at, occurrence, id) = self.pending.pop_first()?;
        self.index.remove(&id);
        self.now = at;
        Some((at, occurrence))
    }

    pub fn peek(&self) -> Option<(Time, &Occurrence)> {
        self.pending.first().map(|(t, o, _)| (*t, o))
    }

    /// Removes a pending occurrence. Returns false if it already fired.
    pub fn cancel(&mut self, id: OccurrenceId) -> bool {
        match self.index.remove(&id) {
            Some((at, occurrence)) => self.pending.remove(&(at, occurrence, id)),
            None => false,
        }
    }

    /// Removes every pending occurrence equal to `occurrence`.
    pub fn cancel_matching(&mut self, occurrence: &Occurrence) -> usize {
        let ids: Vec<OccurrenceId> =
            self.index.iter().filter(|(_, (_, o))| o == occurrence).map(|(id, _)| *id).collect();
        ids.iter().filter(|id| self.cancel(**id)).count()
    }
}
