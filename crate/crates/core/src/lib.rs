//! Feedback-driven DAG orchestration for multi-sensory film production.
//!
//! A pipeline is a set of events (production tasks) with per-event dependency
//! sets. The scheduler walks the pipeline one time slice at a time: at each
//! slice boundary it reads the progress report and any user feedback, then
//! enqueues ready events, revokes events invalidated by feedback, or waits.
//!
//! Workers are role-typed crew members. Mock workers are deterministic and
//! run either under a discrete-event virtual clock (exact makespans, replayable
//! logs) or on the wall clock behind the HTTP service.
//!
//! ```
//! use crewflow::crew::{film_pipeline_preset, WorkerRegistry};
//! use crewflow::feedback::Silent;
//! use crewflow::graph::validate_pipeline;
//! use crewflow::scheduler::{simulate, RunConfig};
//!
//! let def = film_pipeline_preset();
//! let graph = validate_pipeline(&def).unwrap();
//! let workers = WorkerRegistry::mock_for(&def);
//! let (result, _log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
//! assert_eq!(result.makespan, 68);
//! ```

pub mod cli;
pub mod crew;
pub mod feedback;
pub mod graph;
pub mod scheduler;
pub mod service;
pub mod sim;
pub mod store;

mod canonical;

/// Virtual or wall time, in ticks.
pub type Time = u64;

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 42;
