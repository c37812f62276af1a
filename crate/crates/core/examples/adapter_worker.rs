//! Plugging an external generation service in through the adapter wire format.
//! The transport here is an in-process function; a real one would make a
//! network call with the same JSON bytes.

use std::sync::Arc;

use crewflow::crew::{
    film_pipeline_preset, AdapterResponse, AdapterWorker, ArtifactKind, EndpointConfig, FnTransport, WorkerRegistry,
};
use crewflow::feedback::Silent;
use crewflow::graph::validate_pipeline;
use crewflow::scheduler::{simulate, RunConfig};
use serde_json::json;

fn main() {
    let def = film_pipeline_preset();
    let graph = validate_pipeline(&def).unwrap();

    let transport = Arc::new(FnTransport::new(|req| AdapterResponse::Artifact {
        kind: ArtifactKind::SceneFrame,
        content: json!({
            "frames": ["establishing", "close-up"],
            "prompt": req.params.get("style").cloned().unwrap_or(json!("default")),
            "from_script": req.inputs.iter().map(|i| i.content_hash.clone()).collect::<Vec<_>>(),
        }),
    }));
    let endpoint =
        EndpointConfig { address: "https://frames.example/v1".into(), credentials_ref: Some("FRAMES_KEY".into()) };

    let mut workers = WorkerRegistry::mock_for(&def);
    workers.register("artist", Arc::new(AdapterWorker::new("artist", endpoint, transport)));

    let (result, _) = simulate(&graph, &workers, &mut Silent, &RunConfig::default()).unwrap();
    println!("makespan {}", result.makespan);
    println!("art via adapter: {}", result.artifacts["art"].content);
}
