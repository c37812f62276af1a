//! A director rejects the finished dialogue with a note and an amendment;
//! the scheduler revokes it and re-runs it with the new parameters.

use crewflow::crew::{feedback_preset, film_pipeline_preset, WorkerRegistry};
use crewflow::feedback::{scripted_feedback_source, FrequencyPolicy, Silent};
use crewflow::graph::validate_pipeline;
use crewflow::scheduler::{simulate, RunConfig};
use crewflow::store::RecordKind;

fn main() {
    let def = film_pipeline_preset();
    let graph = validate_pipeline(&def).unwrap();
    let workers = WorkerRegistry::mock_for(&def);
    let trace = feedback_preset("dialogue_revision").unwrap();

    let mut source = scripted_feedback_source(&trace, FrequencyPolicy::no_limits(), &graph).unwrap();
    let (result, log) = simulate(&graph, &workers, &mut source, &RunConfig::default()).unwrap();
    let (baseline, _) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();

    for r in log.records() {
        if matches!(r.kind, RecordKind::Feedback | RecordKind::Revoke | RecordKind::Enqueue) {
            println!("t={:>3} {:?} {} {}", r.time, r.kind, r.event_id.as_ref().map_or("", |e| e.as_str()), r.payload);
        }
    }
    println!("\nattempts: {:?}", result.attempts);
    println!("makespan with feedback {} (without {})", result.makespan, baseline.makespan);

    let dialogue = &result.artifacts["dialogue"];
    println!("dialogue params now: {}", dialogue.content["params"]);
    println!("dialogue artifact {} (was {})", dialogue.id, baseline.artifacts["dialogue"].id);
}
