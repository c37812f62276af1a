//! The same stream of director comments under each interaction policy.

use crewflow::crew::{film_pipeline_preset, WorkerRegistry};
use crewflow::feedback::{
    scripted_feedback_source, FeedbackKind, FeedbackTrace, FrequencyPolicy, PolicyName, TraceItem, Trigger, Verdict,
};
use crewflow::graph::{validate_pipeline, Params};
use crewflow::scheduler::{simulate, RunConfig};

fn comment(after: &str, target: &str, verdict: Verdict, note: &str) -> TraceItem {
    TraceItem {
        trigger: Trigger::After(after.into()),
        target: target.into(),
        kind: if note.is_empty() { FeedbackKind::YesNo } else { FeedbackKind::Critical },
        verdict,
        note: note.into(),
        amendments: Params::new(),
    }
}

fn main() {
    let def = film_pipeline_preset();
    let graph = validate_pipeline(&def).unwrap();
    let workers = WorkerRegistry::mock_for(&def);
    let trace = FeedbackTrace::new(vec![
        comment("script", "script", Verdict::Approve, ""),
        comment("art", "art", Verdict::Reject, "warmer palette"),
        comment("dialogue", "dialogue", Verdict::Reject, "shorter lines"),
        comment("voiceover", "voiceover", Verdict::Approve, ""),
        comment("post", "post", Verdict::Reject, "slower cut"),
    ]);

    println!("{:<14} {:>9} {:>11} {:>9}", "policy", "feedback", "revocations", "makespan");
    for name in [PolicyName::None, PolicyName::Low, PolicyName::Intermediate, PolicyName::NoLimits] {
        let mut source = scripted_feedback_source(&trace, FrequencyPolicy::preset(name), &graph).unwrap();
        let (result, log) = simulate(&graph, &workers, &mut source, &RunConfig::default()).unwrap();
        let delivered = log.count(crewflow::store::RecordKind::Feedback);
        println!("{:<14} {:>9} {:>11} {:>9}", format!("{name:?}"), delivered, result.revocations, result.makespan);
    }
}
