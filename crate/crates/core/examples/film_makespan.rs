//! Serial versus parallel makespan of the film pipeline on the virtual clock.

use crewflow::crew::{film_pipeline_preset, WorkerRegistry};
use crewflow::feedback::Silent;
use crewflow::graph::{critical_path, serial_makespan, validate_pipeline};
use crewflow::scheduler::{simulate, Mode, RunConfig};
use crewflow::store::RecordKind;

fn main() {
    let def = film_pipeline_preset();
    let graph = validate_pipeline(&def).expect("preset is valid");
    let workers = WorkerRegistry::mock_for(&def);
    let durations = graph.declared_durations().expect("preset declares durations");

    let cp = critical_path(&graph, &durations).unwrap();
    println!("critical path {:?} = {}", cp.path, cp.length);
    println!("sum of durations = {}", serial_makespan(&graph, &durations).unwrap());

    for mode in [Mode::Parallel, Mode::Serial] {
        let (result, log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default().with_mode(mode)).unwrap();
        println!(
            "{mode:?}: makespan {} over {} slices, {} wait records",
            result.makespan,
            result.slice_count,
            log.count(RecordKind::Wait)
        );
    }

    println!("\nparallel decision log:");
    let (_, log) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
    for r in log.records() {
        let event = r.event_id.as_ref().map(|e| e.as_str()).unwrap_or("-");
        println!("  t={:>3} slice {} {:<8} {}", r.time, r.slice, format!("{:?}", r.kind), event);
    }
}
