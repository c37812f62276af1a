//! A pipeline built in code with a hand-written worker for a new role.

use std::sync::Arc;

use crewflow::crew::{ArtifactBody, ArtifactKind, ExecContext, ExecutionRequest, Worker, WorkerError, WorkerRegistry};
use crewflow::feedback::Silent;
use crewflow::graph::{validate_pipeline, EventSpec, PipelineDef};
use crewflow::scheduler::{simulate, RunConfig};
use crewflow::Time;
use serde_json::json;

/// Writes a title card whose length grows with the number of inputs.
struct TitleDesigner;

impl Worker for TitleDesigner {
    fn duration(&self, request: &ExecutionRequest) -> Time {
        2 + request.inputs.len() as Time
    }

    fn execute(&self, request: &ExecutionRequest, ctx: &ExecContext) -> Result<ArtifactBody, WorkerError> {
        if ctx.cancel.is_cancelled() {
            return Err(WorkerError::Cancelled);
        }
        let font = request.params.get("font").cloned().unwrap_or(json!("serif"));
        Ok(ArtifactBody { kind: ArtifactKind::Generic, content: json!({ "card": "THE END", "font": font }) })
    }
}

fn main() {
    let def = PipelineDef::new(
        "short",
        vec![
            EventSpec::new("script", "scriptwriter").with_duration(5),
            EventSpec::new("frames", "artist").depends_on(["script"]).with_duration(9),
            EventSpec::new("lines", "actors").depends_on(["script"]).with_duration(4),
            EventSpec::new("titles", "titles").depends_on(["script"]).with_param("font", "mono"),
            EventSpec::new("cut", "post").depends_on(["frames", "lines", "titles"]).with_duration(3),
        ],
    );
    let graph = match validate_pipeline(&def) {
        Ok(graph) => graph,
        Err(e) => panic!("invalid pipeline: {e}"),
    };
    let mut workers = WorkerRegistry::mock_for(&def);
    workers.register("titles", Arc::new(TitleDesigner));

    let (result, _) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
    println!("makespan {} in {} slices", result.makespan, result.slice_count);
    println!("titles: {}", result.artifacts["titles"].content);

    let mut broken = def.clone();
    broken.events[0].dependencies.insert("cut".into());
    println!("with a cycle: {}", validate_pipeline(&broken).unwrap_err());
}
