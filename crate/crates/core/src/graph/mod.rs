//! Pipeline definitions and the validated dependency graph.
//!
//! A [`PipelineDef`] lists events, each carrying its own dependency set. The
//! union of those sets forms a directed graph (dependency → dependent) which
//! [`validate_pipeline`] checks for dangling references and cycles before
//! anything is scheduled.

mod file;

pub use file::PipelineFileError;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::crew::EmotionRule;
use crate::scheduler::ProgressReport;
use crate::Time;

/// Identifier of one event in a pipeline.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(String);

impl EventId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EventId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for EventId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl Borrow<str> for EventId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Task parameters. Values are arbitrary structured data.
pub type Params = BTreeMap<String, Value>;

/// Durations keyed by event.
pub type Durations = BTreeMap<EventId, Time>;

/// One production task and the events it must wait for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: EventId,
    pub role: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Params,
    #[serde(default, rename = "deps", alias = "dependencies")]
    pub dependencies: BTreeSet<EventId>,
    /// Mock duration in ticks; overrides the worker's duration model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Time>,
}

impl EventSpec {
    pub fn new(id: impl Into<EventId>, role: impl Into<String>) -> Self {
        Self { id: id.into(), role: role.into(), params: Params::new(), dependencies: BTreeSet::new(), duration: None }
    }

    pub fn depends_on<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<EventId>,
    {
        self.dependencies.extend(deps.into_iter().map(Into::into));
        self
    }

    pub fn with_duration(mut self, duration: Time) -> Self {
        self.duration = Some(duration);
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

/// A named, ordered list of events as written in a pipeline file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDef {
    pub name: String,
    pub events: Vec<EventSpec>,
    /// Keyword → emotion table used by the dubbing worker.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emotion_rules: Vec<EmotionRule>,
}

impl PipelineDef {
    pub fn new(name: impl Into<String>, events: Vec<EventSpec>) -> Self {
        Self { name: name.into(), events, emotion_rules: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("event id must be nonempty")]
    EmptyId,
    #[error("duplicate event id `{0}`")]
    DuplicateId(EventId),
    #[error("event `{event}` depends on unknown event `{dependency}`")]
    UnknownDependency { event: EventId, dependency: EventId },
    #[error("dependency cycle: {}", format_cycle(.0))]
    Cycle(Vec<EventId>),
    #[error("unknown event `{0}`")]
    UnknownId(EventId),
    #[error("no duration for event `{0}`")]
    MissingDuration(EventId),
}

fn format_cycle(cycle: &[EventId]) -> String {
    let mut parts: Vec<&str> = cycle.iter().map(EventId::as_str).collect();
    if let Some(first) = cycle.first() {
        parts.push(first.as_str());
    }
    parts.join(" -> ")
}

/// An acyclic pipeline with resolved references. Immutable once built.
#[derive(Debug, Clone)]
pub struct ValidatedGraph {
    def: PipelineDef,
    index: HashMap<EventId, usize>,
    /// dependency → dependents, sorted by dependent id.
    edges: Vec<Vec<usize>>,
    /// event → dependencies, sorted by id.
    deps: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

/// Checks ids, references and acyclicity, and computes a topological order.
///
/// The order is Kahn's algorithm with ties broken by smallest id, so it is
/// stable across runs.
pub fn validate_pipeline(def: &PipelineDef) -> Result<ValidatedGraph, GraphError> {
    let mut index = HashMap::with_capacity(def.events.len());
    for (i, event) in def.events.iter().enumerate() {
        if event.id.as_str().is_empty() {
            return Err(GraphError::EmptyId);
        }
        if index.insert(event.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateId(event.id.clone()));
        }
    }

    let n = def.events.len();
    let mut edges = vec![Vec::new(); n];
    let mut deps = vec![Vec::new(); n];
    for (i, event) in def.events.iter().enumerate() {
        for dep in &event.dependencies {
            let Some(&d) = index.get(dep) else {
                return Err(GraphError::UnknownDependency { event: event.id.clone(), dependency: dep.clone() });
            };
            if d == i {
                return Err(GraphError::Cycle(vec![event.id.clone()]));
            }
            edges[d].push(i);
            deps[i].push(d);
        }
    }
    let by_id = |a: &usize, b: &usize| def.events[*a].id.cmp(&def.events[*b].id);
    for list in edges.iter_mut().chain(deps.iter_mut()) {
        list.sort_by(by_id);
    }

    let mut indegree: Vec<usize> = deps.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<(&EventId, usize)> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| (&def.events[i].id, i)).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        topo.push(i);
        for &s in &edges[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert((&def.events[s].id, s));
            }
        }
    }
    if topo.len() < n {
        let remaining: Vec<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
        let cycle = find_cycle(&deps, &remaining).into_iter().map(|i| def.events[i].id.clone()).collect();
        return Err(GraphError::Cycle(cycle));
    }

    Ok(ValidatedGraph { def: def.clone(), index, edges, deps, topo })
}

/// Finds one cycle among `candidates` following event → dependency edges.
fn find_cycle(deps: &[Vec<usize>], candidates: &[usize]) -> Vec<usize> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; deps.len()];
    for &start in candidates {
        if color[start] != WHITE {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        color[start] = GREY;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&dep) = deps[node].get(*next) {
                *next += 1;
                match color[dep] {
                    WHITE => {
                        color[dep] = GREY;
                        stack.push((dep, 0));
                    }
                    GREY => {
                        let pos = stack.iter().position(|&(n, _)| n == dep).expect("grey is on stack");
                        return stack[pos..].iter().map(|&(n, _)| n).collect();
                    }
                    _ => {}
                }
            } else {
                color[node] = BLACK;
                stack.pop();
            }
        }
    }
    Vec::new()
}

/// Longest dependency chain under a duration map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CriticalPath {
    pub length: Time,
    pub path: Vec<EventId>,
}

impl ValidatedGraph {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn def(&self) -> &PipelineDef {
        &self.def
    }

    pub fn events(&self) -> &[EventSpec] {
        &self.def.events
    }

    pub fn len(&self) -> usize {
        self.def.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.def.events.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn event(&self, id: &str) -> Option<&EventSpec> {
        self.index.get(id).map(|&i| &self.def.events[i])
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Events in topological order.
    pub fn topo_order(&self) -> impl Iterator<Item = &EventId> + '_ {
        self.topo.iter().map(|&i| &self.def.events[i].id)
    }

    /// Direct dependencies of `id`, sorted.
    pub fn dependencies(&self, id: &str) -> impl Iterator<Item = &EventId> + '_ {
        let list = self.index.get(id).map(|&i| self.deps[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&d| &self.def.events[d].id)
    }

    /// Direct dependents of `id`, sorted.
    pub fn dependents(&self, id: &str) -> impl Iterator<Item = &EventId> + '_ {
        let list = self.index.get(id).map(|&i| self.edges[i].as_slice()).unwrap_or(&[]);
        list.iter().map(|&d| &self.def.events[d].id)
    }

    /// Durations declared in the pipeline file.
    pub fn declared_durations(&self) -> Result<Durations, GraphError> {
        self.def
            .events
            .iter()
            .map(|e| e.duration.map(|d| (e.id.clone(), d)).ok_or_else(|| GraphError::MissingDuration(e.id.clone())))
            .collect()
    }

    fn duration_of(&self, i: usize, durations: &Durations) -> Result<Time, GraphError> {
        let id = &self.def.events[i].id;
        durations.get(id).copied().ok_or_else(|| GraphError::MissingDuration(id.clone()))
    }
}

/// Events that are Pending with every dependency Done.
pub fn ready_set(graph: &ValidatedGraph, report: &ProgressReport) -> BTreeSet<EventId> {
    graph
        .events()
        .iter()
        .filter(|e| !report.running.contains_key(&e.id) && !report.done.contains_key(&e.id))
        .filter(|e| e.dependencies.iter().all(|d| report.done.contains_key(d)))
        .map(|e| e.id.clone())
        .collect()
}

/// Every event reachable from `id` along dependency → dependent edges.
pub fn transitive_dependents(graph: &ValidatedGraph, id: &str) -> Result<BTreeSet<EventId>, GraphError> {
    let &start = graph.index.get(id).ok_or_else(|| GraphError::UnknownId(EventId::new(id)))?;
    let mut seen = vec![false; graph.len()];
    let mut queue = VecDeque::from([start]);
    let mut out = BTreeSet::new();
    while let Some(i) = queue.pop_front() {
        for &s in &graph.edges[i] {
            if !seen[s] {
                seen[s] = true;
                out.insert(graph.def.events[s].id.clone());
                queue.push_back(s);
            }
        }
    }
    Ok(out)
}

/// Longest root-to-sink chain. Ties go to the lexicographically smallest
/// id sequence.
pub fn critical_path(graph: &ValidatedGraph, durations: &Durations) -> Result<CriticalPath, GraphError> {
    let n = graph.len();
    let mut dur = Vec::with_capacity(n);
    for i in 0..n {
        dur.push(graph.duration_of(i, durations)?);
    }
    // best[i]: longest chain starting at i and ending at a sink. All
    // candidate tails start with distinct dependents, so comparing the tails
    // lexicographically is the same as comparing the full chains.
    let mut best: Vec<(Time, Vec<usize>)> = vec![(0, Vec::new()); n];
    for &i in graph.topo.iter().rev() {
        let mut chosen: Option<usize> = None;
        for &s in &graph.edges[i] {
            chosen = match chosen {
                None => Some(s),
                Some(c) if better(graph, &best[s], &best[c]) => Some(s),
                keep => keep,
            };
        }
        let (length, mut path) = match chosen {
            Some(s) => best[s].clone(),
            None => (0, Vec::new()),
        };
        path.insert(0, i);
        best[i] = (length + dur[i], path);
    }
    let mut chosen: Option<usize> = None;
    for i in (0..n).filter(|&i| graph.deps[i].is_empty()) {
        chosen = match chosen {
            None => Some(i),
            Some(c) if better(graph, &best[i], &best[c]) => Some(i),
            keep => keep,
        };
    }
    Ok(match chosen {
        None => CriticalPath { length: 0, path: Vec::new() },
        Some(r) => CriticalPath {
            length: best[r].0,
            path: best[r].1.iter().map(|&i| graph.def.events[i].id.clone()).collect(),
        },
    })
}

fn better(graph: &ValidatedGraph, a: &(Time, Vec<usize>), b: &(Time, Vec<usize>)) -> bool {
    let ids = |p: &[usize]| p.iter().map(|&i| &graph.def.events[i].id).collect::<Vec<_>>();
    a.0 > b.0 || (a.0 == b.0 && ids(&a.1) < ids(&b.1))
}

/// Makespan when every event runs one after another.
pub fn serial_makespan(graph: &ValidatedGraph, durations: &Durations) -> Result<Time, GraphError> {
    (0..graph.len()).try_fold(0, |acc, i| Ok(acc + graph.duration_of(i, durations)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crew::film_pipeline_preset;

    fn ids(list: &[&str]) -> BTreeSet<EventId> {
        list.iter().map(|s| EventId::from(*s)).collect()
    }

    fn film_durations() -> Durations {
        [("script", 10), ("art", 20), ("dialogue", 15), ("action", 30), ("voiceover", 12), ("post", 8)]
            .into_iter()
            .map(|(k, v)| (EventId::from(k), v))
            .collect()
    }

    fn chain(durations: &[(&str, Time)]) -> (ValidatedGraph, Durations) {
        let mut events = Vec::new();
        for (i, (id, _)) in durations.iter().enumerate() {
            let mut e = EventSpec::new(*id, "custom");
            if i > 0 {
                e = e.depends_on([durations[i - 1].0]);
            }
            events.push(e);
        }
        let graph = validate_pipeline(&PipelineDef::new("chain", events)).unwrap();
        let d = durations.iter().map(|(k, v)| (EventId::from(*k), *v)).collect();
        (graph, d)
    }

    #[test]
    fn film_preset_validates() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        assert_eq!(graph.len(), 6);
        // post waits on three events, every other non-root on one.
        assert_eq!(graph.edge_count(), 7);
        let order: Vec<&str> = graph.topo_order().map(EventId::as_str).collect();
        assert_eq!(order, ["script", "art", "action", "dialogue", "voiceover", "post"]);
    }

    #[test]
    fn singleton_validates() {
        let def = PipelineDef::new("one", vec![EventSpec::new("only", "custom")]);
        let graph = validate_pipeline(&def).unwrap();
        assert_eq!(graph.topo_order().collect::<Vec<_>>(), [&EventId::from("only")]);
    }

    #[test]
    fn two_cycle_is_named() {
        let def = PipelineDef::new(
            "loop",
            vec![EventSpec::new("A", "x").depends_on(["B"]), EventSpec::new("B", "x").depends_on(["A"])],
        );
        let err = validate_pipeline(&def).unwrap_err();
        assert_eq!(err, GraphError::Cycle(vec!["A".into(), "B".into()]));
        assert_eq!(err.to_string(), "dependency cycle: A -> B -> A");
    }

    #[test]
    fn self_dependency_is_a_cycle() {
        let def = PipelineDef::new("self", vec![EventSpec::new("A", "x").depends_on(["A"])]);
        assert_eq!(validate_pipeline(&def).unwrap_err(), GraphError::Cycle(vec!["A".into()]));
    }

    #[test]
    fn cycle_behind_a_root_is_found() {
        let def = PipelineDef::new(
            "tail",
            vec![
                EventSpec::new("root", "x"),
                EventSpec::new("a", "x").depends_on(["root", "c"]),
                EventSpec::new("b", "x").depends_on(["a"]),
                EventSpec::new("c", "x").depends_on(["b"]),
            ],
        );
        let GraphError::Cycle(cycle) = validate_pipeline(&def).unwrap_err() else {
            panic!("expected a cycle");
        };
        assert_eq!(cycle.len(), 3);
        assert!(!cycle.contains(&"root".into()));
    }

    #[test]
    fn reference_errors() {
        let dup = PipelineDef::new("d", vec![EventSpec::new("a", "x"), EventSpec::new("a", "y")]);
        assert_eq!(validate_pipeline(&dup).unwrap_err(), GraphError::DuplicateId("a".into()));

        let dangling = PipelineDef::new("u", vec![EventSpec::new("a", "x").depends_on(["ghost"])]);
        assert_eq!(
            validate_pipeline(&dangling).unwrap_err(),
            GraphError::UnknownDependency { event: "a".into(), dependency: "ghost".into() }
        );

        let empty = PipelineDef::new("e", vec![EventSpec::new("", "x")]);
        assert_eq!(validate_pipeline(&empty).unwrap_err(), GraphError::EmptyId);
    }

    #[test]
    fn ready_set_examples() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let mut report = ProgressReport::default();
        assert_eq!(ready_set(&graph, &report), ids(&["script"]));

        report.mark_done("script", 1, "script.a1", 10);
        report.mark_running("art", 1, 10);
        assert_eq!(ready_set(&graph, &report), ids(&["dialogue"]));

        let mut all = ProgressReport::default();
        for e in graph.events() {
            all.mark_done(e.id.as_str(), 1, "x", 0);
        }
        assert!(ready_set(&graph, &all).is_empty());
    }

    #[test]
    fn dependents_examples() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        assert_eq!(
            transitive_dependents(&graph, "script").unwrap(),
            ids(&["art", "dialogue", "action", "voiceover", "post"])
        );
        assert!(transitive_dependents(&graph, "post").unwrap().is_empty());
        assert_eq!(transitive_dependents(&graph, "dialogue").unwrap(), ids(&["voiceover", "post"]));
        assert_eq!(transitive_dependents(&graph, "art").unwrap(), ids(&["action", "post"]));
        assert_eq!(transitive_dependents(&graph, "nope").unwrap_err(), GraphError::UnknownId("nope".into()));
    }

    #[test]
    fn critical_path_examples() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let cp = critical_path(&graph, &film_durations()).unwrap();
        assert_eq!(cp.length, 68);
        let path: Vec<&str> = cp.path.iter().map(EventId::as_str).collect();
        assert_eq!(path, ["script", "art", "action", "post"]);

        let (single, d) = chain(&[("only", 5)]);
        assert_eq!(critical_path(&single, &d).unwrap(), CriticalPath { length: 5, path: vec!["only".into()] });

        let (abc, d) = chain(&[("A", 1), ("B", 2), ("C", 3)]);
        let cp = critical_path(&abc, &d).unwrap();
        assert_eq!((cp.length, cp.path.len()), (6, 3));
    }

    #[test]
    fn critical_path_ties_prefer_smallest_ids() {
        let def = PipelineDef::new(
            "diamond",
            vec![
                EventSpec::new("s", "x"),
                EventSpec::new("b", "x").depends_on(["s"]),
                EventSpec::new("a", "x").depends_on(["s"]),
                EventSpec::new("t", "x").depends_on(["a", "b"]),
            ],
        );
        let graph = validate_pipeline(&def).unwrap();
        let d: Durations = [("s", 1), ("a", 2), ("b", 2), ("t", 1)].into_iter().map(|(k, v)| (k.into(), v)).collect();
        let cp = critical_path(&graph, &d).unwrap();
        assert_eq!(cp.path, vec![EventId::from("s"), "a".into(), "t".into()]);
    }

    #[test]
    fn serial_makespan_examples() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let durations = film_durations();
        let oracle: Time = durations.values().sum();
        assert_eq!(serial_makespan(&graph, &durations).unwrap(), oracle);
        assert_eq!(oracle, 95);

        let zeros: Durations = durations.keys().map(|k| (k.clone(), 0)).collect();
        assert_eq!(serial_makespan(&graph, &zeros).unwrap(), 0);

        let (single, d) = chain(&[("only", 7)]);
        assert_eq!(serial_makespan(&single, &d).unwrap(), 7);
    }

    #[test]
    fn missing_duration_is_reported() {
        let graph = validate_pipeline(&film_pipeline_preset()).unwrap();
        let mut durations = film_durations();
        durations.remove("action");
        assert_eq!(critical_path(&graph, &durations).unwrap_err(), GraphError::MissingDuration("action".into()));
        assert_eq!(serial_makespan(&graph, &durations).unwrap_err(), GraphError::MissingDuration("action".into()));
    }
}
