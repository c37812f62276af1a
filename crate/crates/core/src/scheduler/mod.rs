//! The slice loop.
//!
//! [`plan`] decides what to enqueue, revoke or wait on at one boundary,
//! [`advance`] folds a decision and the boundary's completions into the next
//! progress report, and [`run`] drives both against a [`SliceClock`] until
//! the pipeline is done.

mod clock;
mod engine;
mod plan;
pub(crate) mod report;

pub use crate::store::RunStatus;
pub use clock::{Boundary, Job, LiveFeedback, LiveFeedbackError, SliceClock, VirtualSliceClock, WallSliceClock};
pub use engine::{run, simulate, RunConfig, RunError, RunResult};
pub use plan::{plan, plan_in_mode, Mode, PlanError, ScheduleDecision};
pub use report::{
    advance, AdvanceError, Completion, CompletionOutcome, DoneEntry, EventState, FailedAttempt, ProgressReport,
    Revocation, RunningEntry,
};
