//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use crewflow::graph::{EventId, EventSpec, PipelineDef, ValidatedGraph};
use crewflow::store::{EventLogRecord, RecordKind};
use crewflow::Time;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Roles whose mock workers need no particular inputs.
pub const ROLES: [&str; 5] = ["generic", "scriptwriter", "artist", "actors", "composer"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random DAG with `n` events `e00..`, edges only from lower to higher
/// index, each edge present with probability `p`, durations in `1..=max_dur`.
pub fn random_pipeline(rng: &mut impl Rng, n: usize, p: f64, max_dur: Time) -> PipelineDef {
    let events = (0..n)
        .map(|i| {
            let deps: Vec<String> = (0..i).filter(|_| rng.gen_bool(p)).map(|j| format!("e{j:02}")).collect();
            EventSpec::new(format!("e{i:02}"), ROLES[rng.gen_range(0..ROLES.len())])
                .depends_on(deps)
                .with_duration(rng.gen_range(1..=max_dur))
        })
        .collect();
    PipelineDef::new(format!("random-{n}"), events)
}

pub fn durations_of(def: &PipelineDef) -> BTreeMap<EventId, Time> {
    def.events.iter().map(|e| (e.id.clone(), e.duration.expect("generated events carry durations"))).collect()
}

/// Longest path by enumerating every root-to-sink path explicitly.
pub fn brute_force_critical_path(def: &PipelineDef) -> Time {
    let durations = durations_of(def);
    let dependents = |id: &EventId| -> Vec<EventId> {
        def.events.iter().filter(|e| e.dependencies.contains(id)).map(|e| e.id.clone()).collect()
    };
    fn walk(
        id: &EventId,
        acc: Time,
        durations: &BTreeMap<EventId, Time>,
        dependents: &dyn Fn(&EventId) -> Vec<EventId>,
        best: &mut Time,
    ) {
        let acc = acc + durations[id];
        let next = dependents(id);
        if next.is_empty() {
            *best = (*best).max(acc);
        }
        for n in &next {
            walk(n, acc, durations, dependents, best);
        }
    }
    let mut best = 0;
    for root in def.events.iter().filter(|e| e.dependencies.is_empty()) {
        walk(&root.id, 0, &durations, &dependents, &mut best);
    }
    best
}

/// Every event that can reach from `id` by following dependent edges,
/// computed as a fixpoint over the edge list.
pub fn brute_force_dependents(def: &PipelineDef, id: &str) -> BTreeSet<EventId> {
    let mut out: BTreeSet<EventId> = BTreeSet::new();
    loop {
        let before = out.len();
        for e in &def.events {
            if e.dependencies.iter().any(|d| d.as_str() == id || out.contains(d)) {
                out.insert(e.id.clone());
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Checks the log never starts an event before all its dependencies hold a
/// current (unrevoked) completion. Returns the first violation.
pub fn dependency_violation(graph: &ValidatedGraph, records: &[EventLogRecord]) -> Option<String> {
    let mut done: BTreeSet<EventId> = BTreeSet::new();
    for r in records {
        let Some(id) = &r.event_id else { continue };
        match r.kind {
            RecordKind::Complete => {
                done.insert(id.clone());
            }
            RecordKind::Revoke => {
                done.remove(id);
            }
            RecordKind::Enqueue => {
                for dep in graph.dependencies(id.as_str()) {
                    if !done.contains(dep) {
                        return Some(format!("seq {}: `{id}` started before `{dep}` was done", r.seq));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

/// A chain `c00 -> c01 -> ...` with the given durations.
pub fn chain(durations: &[Time]) -> PipelineDef {
    let events = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let spec = EventSpec::new(format!("c{i:02}"), "generic").with_duration(d);
            if i == 0 {
                spec
            } else {
                spec.depends_on([format!("c{:02}", i - 1)])
            }
        })
        .collect();
    PipelineDef::new("chain", events)
}
