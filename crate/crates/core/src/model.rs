//! Domain vocabulary: task graphs, node states, clusters and sync policies.
//!
//! Everything here is plain data plus the invariant checks the protocols and
//! the simulator rely on. Values are immutable after construction except
//! [`WorkerState`], which is mutated only by the single simulation loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a task within a [`TaskGraph`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// Identifier of a worker node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Identifier of a controller node (cloud, fog or device level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllerId(pub u32);

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Identifier of a worker cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Either end of a controller-worker edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Controller(ControllerId),
    Worker(WorkerId),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Controller(c) => c.fmt(f),
            NodeId::Worker(w) => w.fmt(f),
        }
    }
}

/// The closed set of task categories.
///
/// Synchronous downcalls (`c2w_s`) are the only kind that triggers quorum
/// machinery; the remaining kinds occupy node time only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// `c2w_s`: all workers must start the task at the same instant.
    #[serde(rename = "c2w_s")]
    ControllerToWorkerSync,
    /// `c2w_a`: fire-and-forget downcall executed by every connected worker.
    #[serde(rename = "c2w_a")]
    ControllerToWorkerAsync,
    /// `w2c_s`: upcall that blocks the calling worker for a full round trip.
    #[serde(rename = "w2c_s")]
    WorkerToControllerSync,
    /// `w2c_a`: upcall that charges the worker a send only.
    #[serde(rename = "w2c_a")]
    WorkerToControllerAsync,
    /// `w_l`: worker self call.
    #[serde(rename = "w_l")]
    LocalWorker,
    /// `c_l`: controller self call.
    #[serde(rename = "c_l")]
    LocalController,
}

impl TaskKind {
    /// True for kinds whose body executes on the workers.
    pub fn runs_on_workers(self) -> bool {
        matches!(
            self,
            TaskKind::ControllerToWorkerSync
                | TaskKind::ControllerToWorkerAsync
                | TaskKind::LocalWorker
        )
    }

    pub fn is_sync_point(self) -> bool {
        matches!(self, TaskKind::ControllerToWorkerSync)
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskKind::ControllerToWorkerSync => "c2w_s",
            TaskKind::ControllerToWorkerAsync => "c2w_a",
            TaskKind::WorkerToControllerSync => "w2c_s",
            TaskKind::WorkerToControllerAsync => "w2c_a",
            TaskKind::LocalWorker => "w_l",
            TaskKind::LocalController => "c_l",
        }
    }
}

/// One task of an application graph.
///
/// `base_duration` and `duration_stddev` parameterize the Gaussian execution
/// time drawn per node, which is how worker heterogeneity enters the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub kind: TaskKind,
    /// Mean execution time in seconds, > 0.
    pub base_duration: f64,
    /// Execution time standard deviation in seconds, >= 0.
    pub duration_stddev: f64,
    pub predecessors: BTreeSet<TaskId>,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<TaskId>,
        kind: TaskKind,
        base_duration: f64,
        duration_stddev: f64,
        predecessors: impl IntoIterator<Item = TaskId>,
    ) -> Self {
        TaskSpec {
            task_id: task_id.into(),
            kind,
            base_duration,
            duration_stddev,
            predecessors: predecessors.into_iter().collect(),
        }
    }
}

impl From<String> for TaskId {
    fn from(s: String) -> Self {
        TaskId(s)
    }
}

/// A precedence DAG of typed tasks. Tasks are kept in ascending `task_id`
/// order, which is the deterministic tie-break for simultaneously ready tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub graph_id: String,
    pub tasks: Vec<TaskSpec>,
}

impl TaskGraph {
    pub fn new(graph_id: impl Into<String>, mut tasks: Vec<TaskSpec>) -> Self {
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        TaskGraph {
            graph_id: graph_id.into(),
            tasks,
        }
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| &t.task_id == id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Number of sync points (`c2w_s` tasks) in the graph.
    pub fn sync_task_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.kind.is_sync_point()).count()
    }
}

/// Errors raised by [`validate_task_graph`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cycle detected through tasks {0:?}")]
    CycleDetected(Vec<TaskId>),
    #[error("task {task} references missing predecessor {missing}")]
    DanglingPredecessor { task: TaskId, missing: TaskId },
    #[error("task {task}: {reason}")]
    InvalidTask { task: TaskId, reason: String },
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),
}

/// Checks that the graph is acyclic, that every predecessor resolves, and
/// that per-task duration parameters are sane.
pub fn validate_task_graph(graph: &TaskGraph) -> Result<(), GraphError> {
    let ids: BTreeSet<&TaskId> = graph.tasks.iter().map(|t| &t.task_id).collect();
    if ids.len() != graph.tasks.len() {
        let mut seen = BTreeSet::new();
        for t in &graph.tasks {
            if !seen.insert(&t.task_id) {
                return Err(GraphError::DuplicateTask(t.task_id.clone()));
            }
        }
    }
    for t in &graph.tasks {
        if !(t.base_duration > 0.0) {
            return Err(GraphError::InvalidTask {
                task: t.task_id.clone(),
                reason: format!("base_duration must be > 0, got {}", t.base_duration),
            });
        }
        if !(t.duration_stddev >= 0.0) {
            return Err(GraphError::InvalidTask {
                task: t.task_id.clone(),
                reason: format!("duration_stddev must be >= 0, got {}", t.duration_stddev),
            });
        }
        for p in &t.predecessors {
            if !ids.contains(p) {
                return Err(GraphError::DanglingPredecessor {
                    task: t.task_id.clone(),
                    missing: p.clone(),
                });
            }
        }
    }

    // Kahn's algorithm; whatever cannot be peeled sits on a cycle.
    let mut indegree: BTreeMap<&TaskId, usize> = graph
        .tasks
        .iter()
        .map(|t| (&t.task_id, t.predecessors.len()))
        .collect();
    let mut successors: BTreeMap<&TaskId, Vec<&TaskId>> = BTreeMap::new();
    for t in &graph.tasks {
        for p in &t.predecessors {
            successors.entry(p).or_default().push(&t.task_id);
        }
    }
    let mut frontier: Vec<&TaskId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut visited = 0usize;
    while let Some(id) = frontier.pop() {
        visited += 1;
        if let Some(next) = successors.get(id) {
            for s in next {
                let d = indegree.get_mut(s).expect("successor is a known task");
                *d -= 1;
                if *d == 0 {
                    frontier.push(s);
                }
            }
        }
    }
    if visited != graph.tasks.len() {
        let cycle: Vec<TaskId> = indegree
            .iter()
            .filter(|(_, d)| **d > 0)
            .map(|(id, _)| (*id).clone())
            .collect();
        return Err(GraphError::CycleDetected(cycle));
    }
    Ok(())
}

/// Tasks whose predecessors are all in `completed` and which are not
/// themselves completed, in ascending `task_id` order.
pub fn ready_tasks<'g>(graph: &'g TaskGraph, completed: &BTreeSet<TaskId>) -> Vec<&'g TaskSpec> {
    // Tasks are stored sorted by id, so the scan order is already the
    // deterministic dispatch order.
    graph
        .tasks
        .iter()
        .filter(|t| !completed.contains(&t.task_id))
        .filter(|t| t.predecessors.iter().all(|p| completed.contains(p)))
        .collect()
}

/// Truncation floor for Gaussian duration draws. The distribution tail can
/// go negative; durations must stay positive.
pub const DURATION_FLOOR_S: f64 = 1e-3;

/// Draws an execution time from `Normal(base_duration, duration_stddev^2)`,
/// truncated below at [`DURATION_FLOOR_S`]. A zero stddev returns the base
/// duration exactly, without consuming randomness.
pub fn sample_duration<R: rand::Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> f64 {
    debug_assert!(task.base_duration > 0.0);
    if task.duration_stddev == 0.0 {
        return task.base_duration;
    }
    let normal = rand_distr::Normal::new(task.base_duration, task.duration_stddev)
        .expect("stddev validated finite and non-negative");
    let draw: f64 = rand_distr::Distribution::sample(&normal, rng);
    draw.max(DURATION_FLOOR_S)
}

/// Liveness of a worker node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Liveness {
    Connected,
    Disconnected,
    Failed,
}

/// A 2D position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// Mutable per-worker simulation state.
///
/// `t_avail` is the virtual time at which the worker finishes its current
/// work; it never decreases. A worker executes at most one task at any
/// instant, so reserving time is just advancing `t_avail`.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub worker_id: WorkerId,
    pub t_avail: f64,
    pub liveness: Liveness,
    pub cluster_id: Option<ClusterId>,
    /// Gap-filler tasks for the local scheduler, scanned in order.
    pub local_queue: Vec<TaskSpec>,
    pub position: Option<Position>,
}

impl WorkerState {
    pub fn new(worker_id: WorkerId) -> Self {
        WorkerState {
            worker_id,
            t_avail: 0.0,
            liveness: Liveness::Connected,
            cluster_id: None,
            local_queue: Vec::new(),
            position: None,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.liveness == Liveness::Connected
    }

    /// Reserves `[max(t_avail, start), ..+duration)` on this worker and
    /// returns the actual (start, finish) pair.
    pub fn reserve(&mut self, start: f64, duration: f64) -> (f64, f64) {
        let begin = self.t_avail.max(start);
        let end = begin + duration;
        debug_assert!(end >= self.t_avail, "t_avail must be non-decreasing");
        self.t_avail = end;
        (begin, end)
    }
}

/// Level of a controller in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerLevel {
    Cloud,
    Fog,
    Device,
}

/// A controller node; single-threaded, so inbound messages are serialized
/// against `t_avail`.
#[derive(Debug, Clone)]
pub struct ControllerNode {
    pub controller_id: ControllerId,
    pub level: ControllerLevel,
    pub children: BTreeSet<NodeId>,
    pub t_avail: f64,
}

impl ControllerNode {
    pub fn new(controller_id: ControllerId, level: ControllerLevel) -> Self {
        ControllerNode {
            controller_id,
            level,
            children: BTreeSet::new(),
            t_avail: 0.0,
        }
    }
}

/// A worker cluster with its broker assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub cluster_id: ClusterId,
    pub members: BTreeSet<WorkerId>,
    pub broker_controller: ControllerId,
}

/// How workers report availability to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Every worker sends its own update; the controller pays per message.
    AllWorker,
    /// Workers publish to their cluster broker; one group message per
    /// cluster reaches the controller.
    PublishSubscribe,
}

impl UpdateScheme {
    pub fn label(self) -> &'static str {
        match self {
            UpdateScheme::AllWorker => "all_worker",
            UpdateScheme::PublishSubscribe => "publish_subscribe",
        }
    }
}

/// The synchronization policy variant plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyncPolicy {
    /// Ratio quorum with retries after `lambda` (time-based redundancy).
    TimeRedundant {
        /// Fraction of in-scope workers that must be available, in (0, 1].
        sync_degree: f64,
        /// Delay before re-attempting quorum, seconds.
        lambda: f64,
        max_retries: u32,
    },
    /// Per-cluster quorum, no retries (component-based redundancy).
    ComponentRedundant { min_cluster_size: u32 },
    /// Wait for every worker; abort on timeout.
    Barrier {},
    /// Pre-fixed slots at mu + slot_multiplier * sigma of the preceding
    /// segment; slots never move.
    TimeSlotted { slot_multiplier: f64 },
}

impl SyncPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            SyncPolicy::TimeRedundant { .. } => "time_redundant",
            SyncPolicy::ComponentRedundant { .. } => "component_redundant",
            SyncPolicy::Barrier {} => "barrier",
            SyncPolicy::TimeSlotted { .. } => "time_slotted",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            SyncPolicy::TimeRedundant {
                sync_degree,
                lambda,
                ..
            } => {
                if !(*sync_degree > 0.0 && *sync_degree <= 1.0) {
                    return Err(format!("sync_degree must be in (0,1], got {sync_degree}"));
                }
                if !(*lambda > 0.0) {
                    return Err(format!("lambda must be > 0, got {lambda}"));
                }
            }
            SyncPolicy::ComponentRedundant { min_cluster_size } => {
                if *min_cluster_size < 1 {
                    return Err("min_cluster_size must be >= 1".to_string());
                }
            }
            SyncPolicy::Barrier {} => {}
            SyncPolicy::TimeSlotted { slot_multiplier } => {
                if !slot_multiplier.is_finite() {
                    return Err("slot_multiplier must be finite".to_string());
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON task-graph documents
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskGraphDoc {
    graph_id: String,
    tasks: Vec<TaskDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDoc {
    id: String,
    kind: TaskKind,
    base_duration_s: f64,
    #[serde(default)]
    stddev_s: f64,
    #[serde(default)]
    preds: Vec<String>,
}

/// Errors raised when loading a task-graph JSON document.
#[derive(Debug, Error)]
pub enum GraphLoadError {
    #[error("malformed task graph document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] GraphError),
}

/// Loads a task graph from its JSON document form. Unknown keys are
/// rejected and the graph is validated before being returned.
pub fn load_task_graph_json(json: &str) -> Result<TaskGraph, GraphLoadError> {
    let doc: TaskGraphDoc = serde_json::from_str(json)?;
    let tasks = doc
        .tasks
        .into_iter()
        .map(|t| TaskSpec {
            task_id: TaskId(t.id),
            kind: t.kind,
            base_duration: t.base_duration_s,
            duration_stddev: t.stddev_s,
            predecessors: t.preds.into_iter().map(TaskId).collect(),
        })
        .collect();
    let graph = TaskGraph::new(doc.graph_id, tasks);
    validate_task_graph(&graph)?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn chain(ids: &[&str]) -> TaskGraph {
        let tasks = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let preds = if i == 0 { vec![] } else { vec![TaskId::from(ids[i - 1])] };
                TaskSpec::new(*id, TaskKind::ControllerToWorkerAsync, 1.0, 0.0, preds)
            })
            .collect();
        TaskGraph::new("g", tasks)
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate_task_graph(&TaskGraph::new("g", vec![])).is_ok());
    }

    #[test]
    fn chain_is_valid() {
        assert!(validate_task_graph(&chain(&["a", "b", "c"])).is_ok());
    }

    #[test]
    fn two_cycle_detected() {
        let tasks = vec![
            TaskSpec::new("a", TaskKind::LocalWorker, 1.0, 0.0, vec![TaskId::from("b")]),
            TaskSpec::new("b", TaskKind::LocalWorker, 1.0, 0.0, vec![TaskId::from("a")]),
        ];
        match validate_task_graph(&TaskGraph::new("g", tasks)) {
            Err(GraphError::CycleDetected(ids)) => {
                assert_eq!(ids, vec![TaskId::from("a"), TaskId::from("b")]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dangling_predecessor_detected() {
        let tasks = vec![TaskSpec::new(
            "a",
            TaskKind::LocalWorker,
            1.0,
            0.0,
            vec![TaskId::from("ghost")],
        )];
        match validate_task_graph(&TaskGraph::new("g", tasks)) {
            Err(GraphError::DanglingPredecessor { task, missing }) => {
                assert_eq!(task, TaskId::from("a"));
                assert_eq!(missing, TaskId::from("ghost"));
            }
            other => panic!("expected dangling predecessor, got {other:?}"),
        }
    }

    #[test]
    fn ready_tasks_chain() {
        let g = chain(&["a", "b", "c"]);
        let mut done = BTreeSet::new();
        let ready: Vec<_> = ready_tasks(&g, &done).iter().map(|t| t.task_id.clone()).collect();
        assert_eq!(ready, vec![TaskId::from("a")]);
        done.insert(TaskId::from("a"));
        let ready: Vec<_> = ready_tasks(&g, &done).iter().map(|t| t.task_id.clone()).collect();
        assert_eq!(ready, vec![TaskId::from("b")]);
    }

    #[test]
    fn ready_tasks_diamond_blocks_join() {
        // a -> {b, c} -> d; with {a, b} done, only c is ready (d blocked on c).
        let tasks = vec![
            TaskSpec::new("a", TaskKind::LocalWorker, 1.0, 0.0, vec![]),
            TaskSpec::new("b", TaskKind::LocalWorker, 1.0, 0.0, vec![TaskId::from("a")]),
            TaskSpec::new("c", TaskKind::LocalWorker, 1.0, 0.0, vec![TaskId::from("a")]),
            TaskSpec::new(
                "d",
                TaskKind::LocalWorker,
                1.0,
                0.0,
                vec![TaskId::from("b"), TaskId::from("c")],
            ),
        ];
        let g = TaskGraph::new("g", tasks);
        // Brute-force oracle: a task is ready iff every predecessor is done
        // and it is not itself done.
        let done: BTreeSet<TaskId> = [TaskId::from("a"), TaskId::from("b")].into();
        let expect: Vec<TaskId> = g
            .tasks
            .iter()
            .filter(|t| !done.contains(&t.task_id))
            .filter(|t| t.predecessors.iter().all(|p| done.contains(p)))
            .map(|t| t.task_id.clone())
            .collect();
        assert_eq!(expect, vec![TaskId::from("c")]);
        let ready: Vec<_> = ready_tasks(&g, &done).iter().map(|t| t.task_id.clone()).collect();
        assert_eq!(ready, expect);
    }

    #[test]
    fn topological_completeness() {
        // Repeatedly taking ready tasks visits every task exactly once.
        let g = chain(&["a", "b", "c", "d", "e"]);
        let mut done = BTreeSet::new();
        let mut visits = 0;
        loop {
            let ready: Vec<TaskId> =
                ready_tasks(&g, &done).iter().map(|t| t.task_id.clone()).collect();
            if ready.is_empty() {
                break;
            }
            for id in ready {
                assert!(done.insert(id));
                visits += 1;
            }
        }
        assert_eq!(visits, g.len());
    }

    #[test]
    fn sample_duration_degenerate_gaussian() {
        let t = TaskSpec::new("a", TaskKind::LocalWorker, 100.0, 0.0, vec![]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_duration(&t, &mut rng), 100.0);
    }

    #[test]
    fn sample_duration_mean_matches_base() {
        // Sample-mean oracle over 1e5 draws: mean within 1s +/- 0.01s.
        let t = TaskSpec::new("a", TaskKind::LocalWorker, 1.0, 0.25, vec![]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = sample_duration(&t, &mut rng);
            assert!(d > 0.0);
            sum += d;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn sample_duration_trace_range_stays_positive() {
        // Draws for trace-derived specs (23s..269s bases) are always > 0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for base in [23.0, 60.0, 150.0, 269.0] {
            let t = TaskSpec::new("a", TaskKind::LocalWorker, base, base * 0.1, vec![]);
            for _ in 0..1000 {
                assert!(sample_duration(&t, &mut rng) > 0.0);
            }
        }
    }

    #[test]
    fn load_graph_json_roundtrip() {
        let json = r#"{
            "graph_id": "demo",
            "tasks": [
                {"id": "t0", "kind": "c2w_a", "base_duration_s": 2.0, "stddev_s": 0.1, "preds": []},
                {"id": "t1", "kind": "c2w_s", "base_duration_s": 5.0, "preds": ["t0"]}
            ]
        }"#;
        let g = load_task_graph_json(json).unwrap();
        assert_eq!(g.graph_id, "demo");
        assert_eq!(g.len(), 2);
        assert_eq!(g.sync_task_count(), 1);
        assert_eq!(g.task(&TaskId::from("t1")).unwrap().kind, TaskKind::ControllerToWorkerSync);
    }

    #[test]
    fn load_graph_json_rejects_unknown_keys() {
        let json = r#"{
            "graph_id": "demo",
            "tasks": [
                {"id": "t0", "kind": "w_l", "base_duration_s": 2.0, "color": "red"}
            ]
        }"#;
        assert!(matches!(load_task_graph_json(json), Err(GraphLoadError::Parse(_))));
    }

    #[test]
    fn worker_reserve_never_overlaps() {
        let mut w = WorkerState::new(WorkerId(0));
        let (s1, e1) = w.reserve(10.0, 5.0);
        let (s2, e2) = w.reserve(12.0, 3.0);
        assert_eq!((s1, e1), (10.0, 15.0));
        // Second execution starts only after the first ends.
        assert!(e1 <= s2 || e2 <= s1);
        assert_eq!(s2, 15.0);
    }
}
