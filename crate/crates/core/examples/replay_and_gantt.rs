//! Persist a run to disk, rebuild it from the log alone and print a Gantt chart.

use crewflow::crew::{feedback_preset, film_pipeline_preset, WorkerRegistry};
use crewflow::feedback::{scripted_feedback_source, FrequencyPolicy};
use crewflow::graph::validate_pipeline;
use crewflow::scheduler::{run, RunConfig, VirtualSliceClock};
use crewflow::store::{read_state_file, replay, verify_against, RunLog, Store};

fn main() {
    let dir = std::env::temp_dir().join(format!("crewflow-replay-{}", std::process::id()));
    let store = Store::open(&dir).unwrap();
    store.create_run("demo").unwrap();

    let def = film_pipeline_preset();
    let graph = validate_pipeline(&def).unwrap();
    let trace = feedback_preset("dialogue_revision").unwrap();
    let mut source = scripted_feedback_source(&trace, FrequencyPolicy::no_limits(), &graph).unwrap();
    let config = RunConfig::default().with_run_id("demo");
    let mut sink = store.sink("demo").unwrap();
    run(&graph, &WorkerRegistry::mock_for(&def), &mut source, &mut VirtualSliceClock::new(), &config, &mut sink)
        .unwrap();

    let text = std::fs::read_to_string(dir.join("demo/log.ndjson")).unwrap();
    let log = RunLog::from_ndjson(&text).unwrap();
    let state = replay(log.records()).unwrap();
    let snapshot = read_state_file(&dir.join("demo")).unwrap().expect("snapshot written");
    verify_against(&state, &snapshot).unwrap();
    println!("{} records replayed and verified; makespan {:?}", log.len(), state.makespan);

    let scale = 1;
    for row in &state.gantt {
        let end = row.end.unwrap_or(row.start);
        let bar = if row.revoked { 'x' } else { '#' };
        println!(
            "{:<10} {} |{}{}",
            row.event_id.as_str(),
            row.attempt,
            " ".repeat((row.start / scale) as usize),
            bar.to_string().repeat(((end - row.start) / scale).max(1) as usize)
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}
