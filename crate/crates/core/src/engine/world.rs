//! The simulation world: controller tree, worker fleet, sync-point flows and
//! the sequential event loop that drives them.
//!
//! One `World` is one replication. All state is owned by the loop; nothing
//! is shared across threads, so replications parallelize from outside.
//!
//! Timing rules, in one place:
//!
//! * Messages take one `controller_worker_delay` per controller-worker edge.
//! * Controllers are single threaded: each availability update or barrier
//!   arrival occupies `status_update_cost` of controller time, serially.
//! * Workers report availability when a sync call reaches them, predicting
//!   their remaining work with the configured accuracy. The quorum check
//!   time is `max(predicted availability) + update cost + delay`, clamped
//!   so the controller never checks before it has processed the updates.
//! * A passed quorum starts the sync task exactly one delay after the
//!   check; every committed available worker starts at that instant.
//! * Workers roll for failure after every completed task; a worker that
//!   fails at a sync-task completion returns no result. Failed workers
//!   rejoin at the next run boundary, which is also the only point where
//!   new workers may join.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::{
    predicted_finish, roll_failure, Clock, EventKind, EventQueue, Payload, QueueError, SimParams,
    Time,
};
use crate::metrics::{Collector, MetricsRecord, SyncResolution};
use crate::model::{
    Cluster, ClusterId, ControllerId, ControllerLevel, ControllerNode, Liveness, NodeId, Position,
    SyncPolicy, TaskGraph, TaskId, TaskKind, TaskSpec, UpdateScheme, WorkerId, WorkerState,
};
use crate::protocols::{
    barrier_start_time, cluster_quorum_check, complete_component_sync, compute_quorum_check_time,
    local_schedule, ratio_quorum_check, time_slotted_boundary, time_slotted_quorum, DecisionRecord,
    QuorumFailure, QuorumResult, StatusReport, SyncOutcome, SyncPointState,
};
use crate::rng::RngSet;
use crate::trace::{assign_clusters, PositionGrid};

/// Sentinel task index for local gap-filler executions.
const FILLER_TASK: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("event ceiling of {0} exceeded; simulation is likely livelocked")]
    LivelockGuard(u64),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("no direct link exists between workers {0} and {1}")]
    TopologyViolation(WorkerId, WorkerId),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Everything one replication ships back to the harness.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub sync_completion_times: Vec<f64>,
    pub decisions: Vec<DecisionRecord>,
    pub audit: WorldAudit,
}

/// Cross-cutting counters used by invariants and the acceptance suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldAudit {
    /// Largest observed start-time skew among committed live workers of any
    /// scheduled sync task. Synchrony demands exactly zero.
    pub max_start_skew: f64,
    /// Sync points where the quorum saw a worker made unavailable by a
    /// gap-filler task. The local scheduler's admission bound keeps this
    /// at zero.
    pub syncs_delayed_by_local: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    /// Run-boundary join events (new workers only, not rejoins).
    pub joins: u64,
    pub events_dispatched: u64,
}

/// Static configuration of one replication's world.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub params: SimParams,
    pub policy: SyncPolicy,
    pub update_scheme: UpdateScheme,
    pub worker_count: u32,
    pub cluster_count: u32,
    /// Formation threshold for mobility-driven clustering; also the
    /// component-redundancy quorum requirement.
    pub min_cluster_size: u32,
    /// Availability ratio required at a fixed slot (time-slotted baseline).
    pub slot_sync_degree: f64,
    /// 1 = single controller; > 1 = that many independent fog sync groups.
    pub fog_count: u32,
    pub runs: u32,
    /// Task graphs, cycled per run as `run % graphs.len()`.
    pub graphs: Vec<TaskGraph>,
    pub local_queue_depth: u32,
    pub local_task_min_s: f64,
    pub local_task_max_s: f64,
    /// Absolute barrier timeout; `None` derives it from segment statistics.
    pub barrier_timeout: Option<f64>,
    /// Worker positions over time; enables mobility-driven reassignment.
    pub mobility: Option<PositionGrid>,
    pub mobility_interval_s: f64,
}

/// Graph flattened to dense task indices (ascending task id).
#[derive(Debug, Clone)]
struct IndexedGraph {
    ids: Vec<TaskId>,
    kinds: Vec<TaskKind>,
    base: Vec<f64>,
    stddev: Vec<f64>,
    preds: Vec<Vec<u32>>,
}

impl IndexedGraph {
    fn from_graph(g: &TaskGraph) -> Self {
        let index: BTreeMap<&TaskId, u32> = g
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (&t.task_id, i as u32))
            .collect();
        IndexedGraph {
            ids: g.tasks.iter().map(|t| t.task_id.clone()).collect(),
            kinds: g.tasks.iter().map(|t| t.kind).collect(),
            base: g.tasks.iter().map(|t| t.base_duration).collect(),
            stddev: g.tasks.iter().map(|t| t.duration_stddev).collect(),
            preds: g
                .tasks
                .iter()
                .map(|t| t.predecessors.iter().map(|p| index[p]).collect())
                .collect(),
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone)]
struct WorkerRt {
    state: WorkerState,
    fog: usize,
    /// Index into the mobility grid's node list backing this worker.
    trace_slot: u32,
    last_filler_finish: f64,
}

#[derive(Debug, Clone)]
struct FogRuntime {
    ctrl: ControllerId,
    run: u32,
    finished: bool,
    /// True between a run's last completion and the next run's start; the
    /// dispatch loop re-enters through inline completions and must not
    /// close the same run twice.
    run_closed: bool,
    graph_idx: usize,
    completed: BTreeSet<u32>,
    in_flight: BTreeMap<u32, usize>, // task index -> outstanding executions
    active_sync: Option<u64>,
    /// Controller-side time the current inter-sync segment began.
    segment_start: Time,
    /// (sum of base durations, sum of variances) of worker-executed tasks
    /// dispatched since the last sync point.
    segment_sum: (f64, f64),
}

/// Per-sync-point flow state, spanning all attempts.
#[derive(Debug, Clone)]
struct SyncFlow {
    fog_idx: usize,
    task_index: u32,
    attempt: u32,
    state: SyncPointState,
    extra_attempts: u32,
    scope: BTreeSet<WorkerId>,
    calls_outstanding: usize,
    delivered: BTreeSet<WorkerId>,
    /// cluster -> (max predicted availability, delivered members).
    pubsub_groups: BTreeMap<ClusterId, (f64, BTreeSet<WorkerId>)>,
    expected_updates: usize,
    updates: Vec<StatusReport>,
    updates_processed: usize,
    started: BTreeSet<WorkerId>,
    start_time: Option<Time>,
    starts_outstanding: usize,
    exec_outstanding: usize,
    max_finish: Time,
    results: BTreeSet<WorkerId>,
    /// Cluster snapshot taken when a component quorum passes.
    quorum_clusters: BTreeMap<ClusterId, Cluster>,
    resolved: bool,
    // Barrier bookkeeping.
    barrier_expected: usize,
    barrier_arrivals: Vec<Time>,
}

impl SyncFlow {
    fn new(fog_idx: usize, task_index: u32, task_id: TaskId) -> Self {
        SyncFlow {
            fog_idx,
            task_index,
            attempt: 0,
            state: SyncPointState::new(task_id),
            extra_attempts: 0,
            scope: BTreeSet::new(),
            calls_outstanding: 0,
            delivered: BTreeSet::new(),
            pubsub_groups: BTreeMap::new(),
            expected_updates: 0,
            updates: Vec::new(),
            updates_processed: 0,
            started: BTreeSet::new(),
            start_time: None,
            starts_outstanding: 0,
            exec_outstanding: 0,
            max_finish: 0.0,
            results: BTreeSet::new(),
            quorum_clusters: BTreeMap::new(),
            resolved: false,
            barrier_expected: 0,
            barrier_arrivals: Vec::new(),
        }
    }

    /// Resets per-attempt state before a retry.
    fn begin_attempt(&mut self) {
        self.delivered.clear();
        self.pubsub_groups.clear();
        self.updates.clear();
        self.updates_processed = 0;
        self.expected_updates = 0;
        self.state.delta = None;
        self.state.committed.clear();
    }
}

pub struct World {
    cfg: WorldConfig,
    graphs: Vec<IndexedGraph>,
    clock: Clock,
    queue: EventQueue,
    rngs: RngSet,
    workers: BTreeMap<WorkerId, WorkerRt>,
    controllers: BTreeMap<ControllerId, ControllerNode>,
    clusters: BTreeMap<ClusterId, Cluster>,
    fogs: Vec<FogRuntime>,
    flows: BTreeMap<u64, SyncFlow>,
    next_sync_seq: u64,
    next_worker: u32,
    collectors: Vec<Collector>,
    decisions: Vec<DecisionRecord>,
    audit: WorldAudit,
    /// Worker -> barrier flow waiting for its arrival announcement.
    barrier_waiting: BTreeMap<WorkerId, u64>,
    mobility_round: u64,
}

impl World {
    pub fn new(cfg: WorldConfig, seed: u64) -> Result<Self, SimError> {
        cfg.params.validate().map_err(SimError::InvalidWorld)?;
        cfg.policy.validate().map_err(SimError::InvalidWorld)?;
        if cfg.graphs.is_empty() {
            return Err(SimError::InvalidWorld("at least one task graph required".into()));
        }
        if cfg.fog_count == 0 || cfg.cluster_count == 0 {
            return Err(SimError::InvalidWorld(
                "fog_count and cluster_count must be >= 1".into(),
            ));
        }
        let graphs = cfg.graphs.iter().map(IndexedGraph::from_graph).collect();
        let mut world = World {
            graphs,
            clock: Clock::default(),
            queue: EventQueue::new(),
            rngs: RngSet::new(seed),
            workers: BTreeMap::new(),
            controllers: BTreeMap::new(),
            clusters: BTreeMap::new(),
            fogs: Vec::new(),
            flows: BTreeMap::new(),
            next_sync_seq: 0,
            next_worker: 0,
            collectors: Vec::new(),
            decisions: Vec::new(),
            audit: WorldAudit::default(),
            barrier_waiting: BTreeMap::new(),
            mobility_round: 0,
            cfg,
        };
        world.build();
        Ok(world)
    }

    /// Builds the controller tree, the initial fleet, and the first run.
    fn build(&mut self) {
        let fog_count = self.cfg.fog_count as usize;
        let mut root = ControllerNode::new(ControllerId(0), ControllerLevel::Cloud);
        let orchestrators: Vec<ControllerId> = if fog_count == 1 {
            vec![ControllerId(0)]
        } else {
            (1..=fog_count as u32).map(ControllerId).collect()
        };
        for c in &orchestrators {
            if *c != ControllerId(0) {
                root.children.insert(NodeId::Controller(*c));
            }
        }
        self.controllers.insert(ControllerId(0), root);
        for c in &orchestrators {
            if *c != ControllerId(0) {
                self.controllers
                    .insert(*c, ControllerNode::new(*c, ControllerLevel::Fog));
            }
        }
        for ctrl in &orchestrators {
            self.fogs.push(FogRuntime {
                ctrl: *ctrl,
                run: 0,
                finished: self.cfg.runs == 0,
                run_closed: false,
                graph_idx: 0,
                completed: BTreeSet::new(),
                in_flight: BTreeMap::new(),
                active_sync: None,
                segment_start: 0.0,
                segment_sum: (0.0, 0.0),
            });
            self.collectors.push(Collector::new());
        }
        for i in 0..self.cfg.worker_count {
            self.spawn_worker(i as usize % fog_count, 0.0);
        }
        if self.cfg.mobility.is_some() {
            self.apply_mobility(0);
        } else {
            self.build_static_clusters();
        }
        for fog_idx in 0..self.fogs.len() {
            if !self.fogs[fog_idx].finished {
                self.start_run(fog_idx, 0.0);
            }
        }
        if self.cfg.mobility.is_some() && self.fogs.iter().any(|f| !f.finished) {
            self.post(
                self.cfg.mobility_interval_s,
                EventKind::MobilitySample { grid_index: 1 },
            );
        }
    }

    fn spawn_worker(&mut self, fog_idx: usize, now: Time) -> WorkerId {
        let id = WorkerId(self.next_worker);
        self.next_worker += 1;
        let mut state = WorkerState::new(id);
        state.t_avail = now;
        let trace_slot = if let Some(grid) = &self.cfg.mobility {
            let nodes = grid.nodes.len().max(1) as u32;
            let slot = id.0 % nodes;
            let node = grid.nodes.keys().nth(slot as usize).copied();
            state.position = node.and_then(|n| grid.at(n, self.mobility_round as usize));
            slot
        } else {
            0
        };
        self.controllers
            .get_mut(&self.fogs[fog_idx].ctrl)
            .expect("fog controller exists")
            .children
            .insert(NodeId::Worker(id));
        self.workers.insert(
            id,
            WorkerRt {
                state,
                fog: fog_idx,
                trace_slot,
                last_filler_finish: f64::NEG_INFINITY,
            },
        );
        id
    }

    /// Round-robin static clustering, cluster ids partitioned per fog.
    fn build_static_clusters(&mut self) {
        self.clusters.clear();
        let fogs = self.fogs.len() as u32;
        let per_fog = (self.cfg.cluster_count / fogs).max(1);
        let mut counters: Vec<u32> = vec![0; self.fogs.len()];
        let worker_ids: Vec<WorkerId> = self.workers.keys().copied().collect();
        for w in worker_ids {
            let (fog, cluster) = {
                let rt = self.workers.get_mut(&w).expect("worker exists");
                let fog = rt.fog;
                let cluster = ClusterId(fog as u32 * per_fog + (counters[fog] % per_fog));
                counters[fog] += 1;
                rt.state.cluster_id = Some(cluster);
                (fog, cluster)
            };
            let broker = self.fogs[fog].ctrl;
            self.clusters
                .entry(cluster)
                .or_insert_with(|| Cluster {
                    cluster_id: cluster,
                    members: BTreeSet::new(),
                    broker_controller: broker,
                })
                .members
                .insert(w);
        }
    }

    /// Advances positions to grid point `k` and re-forms clusters from the
    /// positions of connected workers.
    fn apply_mobility(&mut self, k: u64) {
        self.mobility_round = k;
        let grid = self.cfg.mobility.as_ref().expect("mobility configured");
        let node_keys: Vec<u32> = grid.nodes.keys().copied().collect();
        let mut positions: BTreeMap<WorkerId, Position> = BTreeMap::new();
        for (id, rt) in self.workers.iter_mut() {
            if node_keys.is_empty() {
                break;
            }
            let node = node_keys[rt.trace_slot as usize % node_keys.len()];
            if let Some(p) = grid.at(node, k as usize) {
                rt.state.position = Some(p);
            }
            if rt.state.liveness == Liveness::Connected {
                if let Some(p) = rt.state.position {
                    positions.insert(*id, p);
                }
            }
        }
        let assignment =
            assign_clusters(&positions, self.cfg.cluster_count, self.cfg.min_cluster_size);
        self.clusters.clear();
        let fog_ctrls: Vec<ControllerId> = self.fogs.iter().map(|f| f.ctrl).collect();
        for (id, rt) in self.workers.iter_mut() {
            let cluster = assignment.get(id).copied().flatten();
            rt.state.cluster_id = cluster;
            if let Some(c) = cluster {
                self.clusters
                    .entry(c)
                    .or_insert_with(|| Cluster {
                        cluster_id: c,
                        members: BTreeSet::new(),
                        broker_controller: fog_ctrls[rt.fog],
                    })
                    .members
                    .insert(*id);
            }
        }
    }

    // -- small helpers ------------------------------------------------------

    fn post(&mut self, timestamp: Time, kind: EventKind) {
        self.queue
            .post(self.clock.now(), timestamp, kind)
            .expect("engine never posts into the past");
    }

    fn delay(&self) -> f64 {
        self.cfg.params.controller_worker_delay
    }

    fn update_cost(&self) -> f64 {
        self.cfg.params.status_update_cost
    }

    /// True iff the node graph is a tree rooted at the cloud controller:
    /// every node except the root has exactly one parent.
    pub fn topology_is_tree(&self) -> bool {
        let mut parents: BTreeMap<NodeId, usize> = BTreeMap::new();
        for c in self.controllers.values() {
            for child in &c.children {
                *parents.entry(*child).or_insert(0) += 1;
            }
        }
        let root = NodeId::Controller(ControllerId(0));
        if parents.contains_key(&root) {
            return false;
        }
        let all_workers_linked = self
            .workers
            .keys()
            .all(|w| parents.get(&NodeId::Worker(*w)) == Some(&1));
        let all_ctrls_linked = self
            .controllers
            .keys()
            .filter(|c| **c != ControllerId(0))
            .all(|c| parents.get(&NodeId::Controller(*c)) == Some(&1));
        let no_extra = parents.values().all(|n| *n == 1);
        all_workers_linked && all_ctrls_linked && no_extra
    }

    /// Validates a message edge. Worker-worker links do not exist.
    pub fn check_edge(from: NodeId, to: NodeId) -> Result<(), SimError> {
        if let (NodeId::Worker(a), NodeId::Worker(b)) = (from, to) {
            if a != b {
                return Err(SimError::TopologyViolation(a, b));
            }
        }
        Ok(())
    }

    /// Posts a message sent at `sent_at`, arriving one delay later.
    fn send_message(&mut self, from: NodeId, to: NodeId, payload: Payload, sent_at: Time) {
        debug_assert!(Self::check_edge(from, to).is_ok());
        self.audit.messages_sent += 1;
        let arrival = sent_at + self.delay();
        self.post(arrival, EventKind::MessageArrival { from, to, payload });
    }

    fn worker_alive(&self, id: WorkerId) -> bool {
        self.workers
            .get(&id)
            .map(|w| w.state.liveness == Liveness::Connected)
            .unwrap_or(false)
    }

    fn fog_workers(&self, fog_idx: usize) -> BTreeSet<WorkerId> {
        self.workers
            .iter()
            .filter(|(_, rt)| rt.fog == fog_idx && rt.state.liveness == Liveness::Connected)
            .map(|(id, _)| *id)
            .collect()
    }

    fn graph_of(&self, fog_idx: usize) -> &IndexedGraph {
        &self.graphs[self.fogs[fog_idx].graph_idx]
    }

    fn task_id_of(&self, fog_idx: usize, task_index: u32) -> TaskId {
        self.graph_of(fog_idx).ids[task_index as usize].clone()
    }

    fn sample_task_duration(&mut self, fog_idx: usize, task_index: u32) -> f64 {
        self.sample_graph_duration(self.fogs[fog_idx].graph_idx, task_index)
    }

    fn sample_graph_duration(&mut self, graph_idx: usize, task_index: u32) -> f64 {
        let g = &self.graphs[graph_idx];
        let i = task_index as usize;
        if g.stddev[i] == 0.0 {
            return g.base[i];
        }
        let normal = rand_distr::Normal::new(g.base[i], g.stddev[i]).expect("validated");
        let d: f64 = rand_distr::Distribution::sample(&normal, &mut self.rngs.durations);
        d.max(crate::model::DURATION_FLOOR_S)
    }

    fn ctrl_t(&self, fog_idx: usize) -> Time {
        self.controllers[&self.fogs[fog_idx].ctrl].t_avail
    }

    fn set_ctrl_t(&mut self, fog_idx: usize, t: Time) {
        let ctrl = self.fogs[fog_idx].ctrl;
        let node = self.controllers.get_mut(&ctrl).expect("controller exists");
        if t > node.t_avail {
            node.t_avail = t;
        }
    }

    // -- run lifecycle ------------------------------------------------------

    fn start_run(&mut self, fog_idx: usize, now: Time) {
        let run = self.fogs[fog_idx].run;
        let segment_start = self.ctrl_t(fog_idx).max(now);
        {
            let fog = &mut self.fogs[fog_idx];
            fog.run_closed = false;
            fog.graph_idx = run as usize % self.graphs.len();
            fog.completed.clear();
            fog.in_flight.clear();
            fog.segment_start = segment_start;
            fog.segment_sum = (0.0, 0.0);
        }
        self.collectors[fog_idx].begin_run(run, now);
        self.refill_local_queues(fog_idx);
        self.dispatch_ready(fog_idx, now);
    }

    fn refill_local_queues(&mut self, fog_idx: usize) {
        let depth = self.cfg.local_queue_depth;
        if depth == 0 {
            return;
        }
        let (lo, hi) = (self.cfg.local_task_min_s, self.cfg.local_task_max_s);
        let ids: Vec<WorkerId> = self
            .workers
            .iter()
            .filter(|(_, rt)| rt.fog == fog_idx)
            .map(|(id, _)| *id)
            .collect();
        for w in ids {
            let mut queue = Vec::with_capacity(depth as usize);
            for slot in 0..depth {
                let len = if lo >= hi {
                    lo
                } else {
                    use rand::Rng;
                    self.rngs.durations.random_range(lo..hi)
                };
                // Gap fillers have a known fixed length; the local scheduler
                // compares t_l against the gap exactly.
                queue.push(TaskSpec::new(
                    format!("local_{slot}"),
                    TaskKind::LocalWorker,
                    len,
                    0.0,
                    vec![],
                ));
            }
            self.workers.get_mut(&w).expect("worker exists").state.local_queue = queue;
        }
    }

    /// Dispatches every ready task; a sync task blocks the controller until
    /// its resolution.
    fn dispatch_ready(&mut self, fog_idx: usize, now: Time) {
        loop {
            if self.fogs[fog_idx].finished
                || self.fogs[fog_idx].run_closed
                || self.fogs[fog_idx].active_sync.is_some()
            {
                return;
            }
            let total = self.graph_of(fog_idx).len();
            if self.fogs[fog_idx].completed.len() == total {
                self.end_run(fog_idx, now);
                return;
            }
            let next = {
                let fog = &self.fogs[fog_idx];
                let g = &self.graphs[fog.graph_idx];
                (0..total as u32).find(|i| {
                    !fog.completed.contains(i)
                        && !fog.in_flight.contains_key(i)
                        && g.preds[*i as usize].iter().all(|p| fog.completed.contains(p))
                })
            };
            let Some(task_index) = next else { return };
            let kind = self.graph_of(fog_idx).kinds[task_index as usize];
            self.dispatch_task(fog_idx, task_index, kind, now);
            if kind.is_sync_point() {
                return;
            }
        }
    }

    fn dispatch_task(&mut self, fog_idx: usize, task_index: u32, kind: TaskKind, now: Time) {
        match kind {
            TaskKind::ControllerToWorkerSync => self.dispatch_sync(fog_idx, task_index, now),
            TaskKind::ControllerToWorkerAsync => {
                self.dispatch_async_downcall(fog_idx, task_index, now)
            }
            TaskKind::LocalWorker => self.dispatch_local_worker(fog_idx, task_index, now),
            TaskKind::LocalController => self.dispatch_local_controller(fog_idx, task_index, now),
            TaskKind::WorkerToControllerSync => self.dispatch_upcall(fog_idx, task_index, now, true),
            TaskKind::WorkerToControllerAsync => {
                self.dispatch_upcall(fog_idx, task_index, now, false)
            }
        }
    }

    fn note_segment_task(&mut self, fog_idx: usize, task_index: u32) {
        let (base, stddev) = {
            let g = &self.graphs[self.fogs[fog_idx].graph_idx];
            (g.base[task_index as usize], g.stddev[task_index as usize])
        };
        let fog = &mut self.fogs[fog_idx];
        fog.segment_sum.0 += base;
        fog.segment_sum.1 += stddev * stddev;
    }

    fn complete_task(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        self.fogs[fog_idx].in_flight.remove(&task_index);
        self.fogs[fog_idx].completed.insert(task_index);
        self.dispatch_ready(fog_idx, now);
    }

    fn end_run(&mut self, fog_idx: usize, now: Time) {
        self.fogs[fog_idx].run_closed = true;
        self.collectors[fog_idx].end_run(now);
        let (ctrl, run) = (self.fogs[fog_idx].ctrl, self.fogs[fog_idx].run);
        self.post(now, EventKind::JoinCheck { controller: ctrl.0, run });
    }

    // -- plain task kinds ---------------------------------------------------

    /// `c2w_a`: the command reaches each connected worker one delay after
    /// issue and queues behind the worker's current work. The controller
    /// does not wait: the walk continues at the dispatch instant.
    fn dispatch_async_downcall(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        self.note_segment_task(fog_idx, task_index);
        let eff = self.ctrl_t(fog_idx).max(now);
        let arrival = eff + self.delay();
        let scope = self.fog_workers(fog_idx);
        let run = self.fogs[fog_idx].run;
        for w in scope {
            let dur = self.sample_task_duration(fog_idx, task_index);
            let finish = {
                let rt = self.workers.get_mut(&w).expect("worker exists");
                rt.state.reserve(arrival, dur).1
            };
            self.post(
                finish,
                EventKind::TaskComplete {
                    node: NodeId::Worker(w),
                    task: task_index,
                    run,
                    sync_seq: None,
                },
            );
        }
        self.fogs[fog_idx].completed.insert(task_index);
    }

    /// `w_l`: every connected worker queues its own copy at its earliest
    /// availability; no messaging involved and the walk continues.
    fn dispatch_local_worker(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        self.note_segment_task(fog_idx, task_index);
        let scope = self.fog_workers(fog_idx);
        let run = self.fogs[fog_idx].run;
        for w in scope {
            let dur = self.sample_task_duration(fog_idx, task_index);
            let finish = {
                let rt = self.workers.get_mut(&w).expect("worker exists");
                rt.state.reserve(now, dur).1
            };
            self.post(
                finish,
                EventKind::TaskComplete {
                    node: NodeId::Worker(w),
                    task: task_index,
                    run,
                    sync_seq: None,
                },
            );
        }
        self.fogs[fog_idx].completed.insert(task_index);
    }

    /// `c_l`: serial controller work.
    fn dispatch_local_controller(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        let eff = self.ctrl_t(fog_idx).max(now);
        let dur = self.sample_task_duration(fog_idx, task_index);
        self.set_ctrl_t(fog_idx, eff + dur);
        self.fogs[fog_idx].in_flight.insert(task_index, 1);
        let (ctrl, run) = (self.fogs[fog_idx].ctrl, self.fogs[fog_idx].run);
        self.post(
            eff + dur,
            EventKind::TaskComplete {
                node: NodeId::Controller(ctrl),
                task: task_index,
                run,
                sync_seq: None,
            },
        );
    }

    /// `w2c_s` / `w2c_a`: every connected worker calls up; the controller
    /// executes the bodies serially in request-arrival order. A blocking
    /// upcall holds each worker until its acknowledgement returns and gates
    /// the walk on the last one; the asynchronous variant blocks nobody.
    fn dispatch_upcall(&mut self, fog_idx: usize, task_index: u32, now: Time, blocking: bool) {
        let scope = self.fog_workers(fog_idx);
        if scope.is_empty() {
            self.fogs[fog_idx].completed.insert(task_index);
            return;
        }
        let d = self.delay();
        // Request arrival order: (send time, worker id).
        let mut requests: Vec<(Time, WorkerId)> = scope
            .iter()
            .map(|w| (self.workers[w].state.t_avail.max(now) + d, *w))
            .collect();
        requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if blocking {
            self.fogs[fog_idx].in_flight.insert(task_index, requests.len());
        }
        let mut ctrl_t = self.ctrl_t(fog_idx);
        let (ctrl, run) = (self.fogs[fog_idx].ctrl, self.fogs[fog_idx].run);
        for (arrival, w) in requests {
            let dur = self.sample_task_duration(fog_idx, task_index);
            ctrl_t = ctrl_t.max(arrival) + dur;
            if blocking {
                let ack_at = ctrl_t + d;
                {
                    let rt = self.workers.get_mut(&w).expect("worker exists");
                    if rt.state.t_avail < ack_at {
                        rt.state.t_avail = ack_at;
                    }
                }
                self.send_message(
                    NodeId::Controller(ctrl),
                    NodeId::Worker(w),
                    Payload::UpcallAck { task: task_index, run },
                    ctrl_t,
                );
            }
        }
        self.set_ctrl_t(fog_idx, ctrl_t);
        if !blocking {
            self.fogs[fog_idx].completed.insert(task_index);
        }
    }

    // -- sync point flows ---------------------------------------------------

    fn dispatch_sync(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        let eff = self.ctrl_t(fog_idx).max(now);
        let seq = self.next_sync_seq;
        self.next_sync_seq += 1;
        let task_id = self.task_id_of(fog_idx, task_index);
        let mut flow = SyncFlow::new(fog_idx, task_index, task_id);
        self.fogs[fog_idx].active_sync = Some(seq);
        self.fogs[fog_idx].in_flight.insert(task_index, 1);

        match self.cfg.policy.clone() {
            SyncPolicy::TimeSlotted { slot_multiplier } => {
                let (mu, var) = self.fogs[fog_idx].segment_sum;
                // Slots anchor where workers began the segment: one command
                // delay after the controller opened it.
                let worker_segment_start = self.fogs[fog_idx].segment_start + self.delay();
                let slot =
                    time_slotted_boundary(worker_segment_start, mu, var.sqrt(), slot_multiplier);
                let fire = slot.max(eff);
                flow.scope = self.fog_workers(fog_idx);
                flow.state.delta = Some(fire);
                self.flows.insert(seq, flow);
                self.post(fire, EventKind::SlotBoundary { sync_seq: seq });
            }
            SyncPolicy::Barrier {} => {
                flow.scope = self.fog_workers(fog_idx);
                flow.calls_outstanding = flow.scope.len();
                let scope = flow.scope.clone();
                self.flows.insert(seq, flow);
                if scope.is_empty() {
                    self.log_sync_failure(seq, eff, 0, 0, QuorumFailure::BarrierTimeout);
                    self.resolve_sync(seq, Err(QuorumFailure::BarrierTimeout), eff, 0);
                    return;
                }
                let timeout = eff + self.barrier_timeout(fog_idx, scope.len());
                let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
                for w in scope {
                    self.send_message(
                        ctrl,
                        NodeId::Worker(w),
                        Payload::SyncCall { sync_seq: seq, attempt: 0 },
                        eff,
                    );
                }
                self.post(timeout, EventKind::QuorumTimerFire { sync_seq: seq, attempt: 0 });
            }
            SyncPolicy::TimeRedundant { .. } | SyncPolicy::ComponentRedundant { .. } => {
                self.flows.insert(seq, flow);
                self.begin_quorum_attempt(seq, eff);
            }
        }
    }

    fn barrier_timeout(&self, fog_idx: usize, scope: usize) -> f64 {
        if let Some(t) = self.cfg.barrier_timeout {
            return t;
        }
        let (mu, _) = self.fogs[fog_idx].segment_sum;
        // Ten segment means plus ten rounds of protocol overhead, so an
        // empty segment cannot time out instantly.
        10.0 * mu + 10.0 * (2.0 * self.delay() + self.update_cost() * scope as f64 + 1.0)
    }

    /// Starts one quorum attempt: sync calls out to the current scope.
    fn begin_quorum_attempt(&mut self, seq: u64, at: Time) {
        let fog_idx = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.begin_attempt();
            flow.fog_idx
        };
        let scope = self.fog_workers(fog_idx);
        let attempt = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.scope = scope.clone();
            flow.calls_outstanding = scope.len();
            flow.attempt
        };
        if scope.is_empty() {
            self.fail_quorum_now(seq, at);
            return;
        }
        let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
        for w in scope {
            self.send_message(
                ctrl,
                NodeId::Worker(w),
                Payload::SyncCall { sync_seq: seq, attempt },
                at,
            );
        }
    }

    /// Nobody can commit: the quorum fails without a timer.
    fn fail_quorum_now(&mut self, seq: u64, now: Time) {
        let (attempt, total) = {
            let flow = &self.flows[&seq];
            (flow.attempt, flow.scope.len())
        };
        let reason = match self.cfg.policy {
            SyncPolicy::ComponentRedundant { .. } => QuorumFailure::ClusterUnderfull,
            _ => QuorumFailure::RetriesExhausted,
        };
        self.log_sync_failure(seq, now, attempt, total, reason);
        self.resolve_sync(seq, Err(reason), now, 0);
    }

    fn log_sync_failure(
        &mut self,
        seq: u64,
        t: Time,
        attempt: u32,
        total: usize,
        reason: QuorumFailure,
    ) {
        self.log_decision(seq, t, attempt, 0, total, &QuorumResult::Failed { reason });
    }

    /// A sync call reaches a worker: it commits by reporting availability.
    /// The prediction applies to the remaining work, re-anchored at the
    /// report time (a multiplicative error on absolute virtual time would
    /// grow without bound over a long simulation).
    fn on_sync_call(&mut self, seq: u64, attempt: u32, worker: WorkerId, now: Time) {
        {
            let Some(flow) = self.flows.get_mut(&seq) else { return };
            if flow.resolved || flow.attempt != attempt {
                return;
            }
            flow.calls_outstanding -= 1;
        }
        let alive = self.worker_alive(worker);
        let is_barrier = matches!(self.cfg.policy, SyncPolicy::Barrier {});
        if alive {
            let t_avail = self.workers[&worker].state.t_avail;
            let fog_idx = self.flows[&seq].fog_idx;
            let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
            if is_barrier {
                {
                    let flow = self.flows.get_mut(&seq).expect("flow exists");
                    flow.delivered.insert(worker);
                    flow.barrier_expected += 1;
                }
                if t_avail <= now {
                    // Already at the sync point: announce arrival now.
                    self.send_message(
                        NodeId::Worker(worker),
                        ctrl,
                        Payload::BarrierArrival { sync_seq: seq, arrived_at: now },
                        now,
                    );
                } else {
                    // Announce when the current work completes, if still alive.
                    self.barrier_waiting.insert(worker, seq);
                }
            } else {
                let remaining = (t_avail - now).max(0.0);
                let predicted = now
                    + predicted_finish(
                        remaining,
                        self.cfg.params.prediction_accuracy,
                        &mut self.rngs.prediction,
                    );
                let cluster = self.workers[&worker].state.cluster_id;
                let scheme = self.cfg.update_scheme;
                {
                    let flow = self.flows.get_mut(&seq).expect("flow exists");
                    flow.delivered.insert(worker);
                    if scheme == UpdateScheme::PublishSubscribe {
                        // Publish to the cluster broker: local and free. A
                        // worker without a cluster cannot take part in the
                        // publish-subscribe update (the NoCluster path).
                        if let Some(c) = cluster {
                            let entry = flow
                                .pubsub_groups
                                .entry(c)
                                .or_insert((f64::NEG_INFINITY, BTreeSet::new()));
                            entry.0 = entry.0.max(predicted);
                            entry.1.insert(worker);
                        }
                    }
                }
                if scheme == UpdateScheme::AllWorker {
                    self.send_message(
                        NodeId::Worker(worker),
                        ctrl,
                        Payload::StatusUpdate {
                            sync_seq: seq,
                            attempt,
                            predicted_avail: predicted,
                        },
                        now,
                    );
                }
            }
        }
        // Last call arrived: freeze expectations for this attempt.
        let outstanding = self.flows[&seq].calls_outstanding;
        if outstanding > 0 {
            return;
        }
        if is_barrier {
            if self.flows[&seq].barrier_expected == 0 {
                let total = self.flows[&seq].scope.len();
                self.log_sync_failure(seq, now, 0, total, QuorumFailure::BarrierTimeout);
                self.resolve_sync(seq, Err(QuorumFailure::BarrierTimeout), now, 0);
            }
            return;
        }
        match self.cfg.update_scheme {
            UpdateScheme::AllWorker => {
                let expected = self.flows[&seq].delivered.len();
                self.flows.get_mut(&seq).expect("flow exists").expected_updates = expected;
                if expected == 0 {
                    self.fail_quorum_now(seq, now);
                }
            }
            UpdateScheme::PublishSubscribe => {
                let (expected, groups, fog_idx, attempt) = {
                    let flow = self.flows.get_mut(&seq).expect("flow exists");
                    flow.expected_updates = flow.pubsub_groups.len();
                    let groups: Vec<(ClusterId, f64)> = flow
                        .pubsub_groups
                        .iter()
                        .map(|(c, (max_pred, _))| (*c, *max_pred))
                        .collect();
                    (flow.expected_updates, groups, flow.fog_idx, flow.attempt)
                };
                if expected == 0 {
                    self.fail_quorum_now(seq, now);
                    return;
                }
                // The last publisher in each cluster triggers exactly one
                // group availability message at the broker.
                let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
                for (cluster, max_pred) in groups {
                    self.send_message(
                        ctrl,
                        ctrl,
                        Payload::GroupAvailability {
                            sync_seq: seq,
                            attempt,
                            cluster,
                            max_predicted_avail: max_pred,
                        },
                        now,
                    );
                }
            }
        }
    }

    /// One availability update is processed serially by the controller;
    /// the last expected one fixes the quorum check time.
    fn on_status_update(&mut self, seq: u64, attempt: u32, report: StatusReport, now: Time) {
        let fog_idx = {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved || flow.attempt != attempt {
                return;
            }
            flow.fog_idx
        };
        let done = self.ctrl_t(fog_idx).max(now) + self.update_cost();
        self.set_ctrl_t(fog_idx, done);
        self.collectors[fog_idx].count_update_message();
        let ready = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            if self.cfg.update_scheme == UpdateScheme::AllWorker {
                flow.state.committed.insert(report.worker);
            }
            flow.updates.push(report);
            flow.updates_processed += 1;
            flow.updates_processed == flow.expected_updates
        };
        if !ready {
            return;
        }
        let (delta, recipients) = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            let formula = compute_quorum_check_time(
                &flow.updates,
                self.cfg.params.status_update_cost,
                self.cfg.params.controller_worker_delay,
            )
            .expect("at least one update was processed");
            // The controller cannot run the check before it is free.
            let delta = formula.max(done);
            flow.state.delta = Some(delta);
            (delta, flow.delivered.iter().copied().collect::<Vec<_>>())
        };
        let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
        for w in recipients {
            self.send_message(
                ctrl,
                NodeId::Worker(w),
                Payload::QuorumCheckTime { sync_seq: seq, attempt, delta },
                done,
            );
        }
        self.post(delta, EventKind::QuorumTimerFire { sync_seq: seq, attempt });
    }

    /// A group availability message commits every delivered member of the
    /// cluster in a single controller-side update.
    fn on_group_availability(
        &mut self,
        seq: u64,
        attempt: u32,
        cluster: ClusterId,
        max_pred: Time,
        now: Time,
    ) {
        let report = {
            let Some(flow) = self.flows.get_mut(&seq) else { return };
            if flow.resolved || flow.attempt != attempt {
                return;
            }
            let Some((_, members)) = flow.pubsub_groups.get(&cluster) else { return };
            let representative = *members.iter().next().expect("group has a member");
            let members = members.clone();
            flow.state.committed.extend(members);
            StatusReport {
                worker: representative,
                predicted_avail: max_pred,
            }
        };
        self.on_status_update(seq, attempt, report, now);
    }

    /// Quorum decision point for the redundancy policies; doubles as the
    /// barrier timeout.
    fn on_quorum_timer(&mut self, seq: u64, attempt: u32, now: Time) {
        {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved {
                return;
            }
        }
        if matches!(self.cfg.policy, SyncPolicy::Barrier {}) {
            let (arrived, total) = {
                let flow = &self.flows[&seq];
                if flow.start_time.is_some() {
                    return; // all workers arrived; the barrier already opened
                }
                (flow.barrier_arrivals.len(), flow.scope.len())
            };
            self.log_decision(
                seq,
                now,
                0,
                arrived,
                total,
                &QuorumResult::Failed { reason: QuorumFailure::BarrierTimeout },
            );
            self.resolve_sync(seq, Err(QuorumFailure::BarrierTimeout), now, arrived);
            return;
        }
        let delta = {
            let flow = &self.flows[&seq];
            if flow.attempt != attempt || flow.state.delta.is_none() {
                return;
            }
            flow.state.delta.expect("delta set")
        };
        let committed: BTreeSet<WorkerId> = match self.cfg.update_scheme {
            UpdateScheme::AllWorker => self.flows[&seq].delivered.clone(),
            UpdateScheme::PublishSubscribe => self.flows[&seq].state.committed.clone(),
        };
        let available: BTreeSet<WorkerId> = committed
            .iter()
            .copied()
            .filter(|w| {
                self.workers
                    .get(w)
                    .map(|rt| rt.state.liveness == Liveness::Connected && rt.state.t_avail <= delta)
                    .unwrap_or(false)
            })
            .collect();
        // Workers whose unavailability traces to a gap filler; the local
        // scheduler's admission bound makes this impossible, which the
        // audit verifies.
        let delayed_by_local = committed.iter().any(|w| {
            self.workers
                .get(w)
                .map(|rt| {
                    rt.state.liveness == Liveness::Connected
                        && rt.state.t_avail > delta
                        && rt.last_filler_finish == rt.state.t_avail
                })
                .unwrap_or(false)
        });
        if delayed_by_local {
            self.audit.syncs_delayed_by_local += 1;
        }
        let total = self.flows[&seq].scope.len();
        match self.cfg.policy.clone() {
            SyncPolicy::TimeRedundant { sync_degree, lambda, max_retries } => {
                let result = {
                    let flow = &self.flows[&seq];
                    ratio_quorum_check(
                        &flow.state,
                        available.len(),
                        total,
                        sync_degree,
                        lambda,
                        max_retries,
                        delta,
                        self.cfg.params.controller_worker_delay,
                    )
                };
                self.log_decision(seq, now, attempt, available.len(), total, &result);
                match result {
                    QuorumResult::Passed { start_time } => {
                        self.schedule_sync_start(seq, start_time, &available, delta);
                    }
                    QuorumResult::Retry { next_attempt } => {
                        {
                            let flow = self.flows.get_mut(&seq).expect("flow exists");
                            flow.state.retries_used += 1;
                            flow.extra_attempts += 1;
                            flow.attempt += 1;
                        }
                        self.begin_quorum_attempt(seq, next_attempt.max(now));
                    }
                    QuorumResult::Failed { reason } => {
                        self.resolve_sync(seq, Err(reason), now, available.len());
                    }
                }
            }
            SyncPolicy::ComponentRedundant { min_cluster_size } => {
                // Clusters with at least one member in this fog's scope.
                let scope = self.flows[&seq].scope.clone();
                let participating: BTreeMap<ClusterId, Cluster> = self
                    .clusters
                    .iter()
                    .filter(|(_, c)| c.members.iter().any(|m| scope.contains(m)))
                    .map(|(id, c)| (*id, c.clone()))
                    .collect();
                let result = cluster_quorum_check(
                    &participating,
                    &available,
                    min_cluster_size,
                    delta,
                    self.cfg.params.controller_worker_delay,
                );
                let clustered_avail: BTreeSet<WorkerId> = available
                    .iter()
                    .copied()
                    .filter(|w| participating.values().any(|c| c.members.contains(w)))
                    .collect();
                self.log_decision(seq, now, attempt, clustered_avail.len(), total, &result);
                match result {
                    QuorumResult::Passed { start_time } => {
                        self.flows.get_mut(&seq).expect("flow exists").quorum_clusters =
                            participating;
                        self.schedule_sync_start(seq, start_time, &clustered_avail, delta);
                    }
                    QuorumResult::Failed { reason } => {
                        self.resolve_sync(seq, Err(reason), now, clustered_avail.len());
                    }
                    QuorumResult::Retry { .. } => {
                        unreachable!("component branch has no retry arm")
                    }
                }
            }
            SyncPolicy::Barrier {} | SyncPolicy::TimeSlotted { .. } => {
                unreachable!("baselines use their own timers")
            }
        }
    }

    /// The dedicated sync slot fires: one availability test, no retries,
    /// and the slot never moves.
    fn on_slot_boundary(&mut self, seq: u64, now: Time) {
        let scope = {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved {
                return;
            }
            flow.scope.clone()
        };
        let available: BTreeSet<WorkerId> = scope
            .iter()
            .copied()
            .filter(|w| {
                self.workers
                    .get(w)
                    .map(|rt| rt.state.liveness == Liveness::Connected && rt.state.t_avail <= now)
                    .unwrap_or(false)
            })
            .collect();
        let result = time_slotted_quorum(
            available.len(),
            scope.len(),
            self.cfg.slot_sync_degree,
            now,
            self.cfg.params.controller_worker_delay,
        );
        self.log_decision(seq, now, 0, available.len(), scope.len(), &result);
        match result {
            QuorumResult::Passed { start_time } => {
                self.schedule_sync_start(seq, start_time, &available, now);
            }
            QuorumResult::Failed { reason } => {
                self.resolve_sync(seq, Err(reason), now, available.len());
            }
            QuorumResult::Retry { .. } => unreachable!("slots are never moved"),
        }
    }

    /// A barrier arrival is processed serially; once every expected worker
    /// has arrived, the start command goes out.
    fn on_barrier_arrival(&mut self, seq: u64, now: Time) {
        let fog_idx = {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved {
                return;
            }
            flow.fog_idx
        };
        let done = self.ctrl_t(fog_idx).max(now) + self.update_cost();
        self.set_ctrl_t(fog_idx, done);
        self.collectors[fog_idx].count_update_message();
        let all_arrived = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.barrier_arrivals.push(done);
            flow.barrier_arrivals.len() == flow.barrier_expected
        };
        if !all_arrived {
            return;
        }
        let (start, arrived, total, delivered) = {
            let flow = &self.flows[&seq];
            let start = barrier_start_time(
                &flow.barrier_arrivals,
                self.cfg.params.controller_worker_delay,
            )
            .expect("at least one arrival");
            (
                start,
                flow.barrier_arrivals.len(),
                flow.scope.len(),
                flow.delivered.clone(),
            )
        };
        self.log_decision(
            seq,
            now,
            0,
            arrived,
            total,
            &QuorumResult::Passed { start_time: start },
        );
        self.schedule_sync_start(seq, start, &delivered, done);
    }

    /// Issues simultaneous start commands; every live recipient begins the
    /// sync task at exactly `start_time`.
    fn schedule_sync_start(
        &mut self,
        seq: u64,
        start_time: Time,
        participants: &BTreeSet<WorkerId>,
        sent_at: Time,
    ) {
        let fog_idx = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.state.outcome = SyncOutcome::Scheduled { start_time };
            flow.start_time = Some(start_time);
            flow.starts_outstanding = participants.len();
            flow.fog_idx
        };
        if participants.is_empty() {
            // Nobody to run the task.
            match self.cfg.policy {
                SyncPolicy::ComponentRedundant { .. } => {
                    self.resolve_sync(seq, Err(QuorumFailure::IncompleteResults), sent_at, 0);
                }
                _ => {
                    self.resolve_sync(seq, Ok(()), sent_at, 0);
                }
            }
            return;
        }
        let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
        for w in participants {
            self.send_message(ctrl, NodeId::Worker(*w), Payload::StartSyncTask { sync_seq: seq }, sent_at);
        }
    }

    /// A start command reaches a worker: it begins the sync task this very
    /// instant (the synchrony contract).
    fn on_start_sync_task(&mut self, seq: u64, worker: WorkerId, alive: bool, now: Time) {
        let (fog_idx, task_index, start) = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.starts_outstanding -= 1;
            (
                flow.fog_idx,
                flow.task_index,
                flow.start_time.expect("scheduled"),
            )
        };
        let run = self.fogs[fog_idx].run;
        if !alive {
            let finished = {
                let flow = &self.flows[&seq];
                flow.starts_outstanding == 0 && flow.exec_outstanding == 0
            };
            if finished {
                // Everyone died between the quorum and the start command.
                match self.cfg.policy {
                    SyncPolicy::ComponentRedundant { .. } => {
                        self.resolve_sync(seq, Err(QuorumFailure::IncompleteResults), now, 0)
                    }
                    _ => self.resolve_sync(seq, Ok(()), now, 0),
                }
            }
            return;
        }
        // Zero skew in virtual time: every start lands exactly on the
        // scheduled instant.
        let skew = (now - start).abs();
        if skew > self.audit.max_start_skew {
            self.audit.max_start_skew = skew;
        }
        let dur = self.sample_task_duration(fog_idx, task_index);
        let finish = {
            let rt = self.workers.get_mut(&worker).expect("worker exists");
            debug_assert!(rt.state.t_avail <= now, "participants were available at delta");
            let (begin, finish) = rt.state.reserve(now, dur);
            debug_assert_eq!(begin, now, "sync task starts exactly at the scheduled time");
            finish
        };
        {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.started.insert(worker);
            flow.exec_outstanding += 1;
            if finish > flow.max_finish {
                flow.max_finish = finish;
            }
        }
        self.post(
            finish,
            EventKind::TaskComplete {
                node: NodeId::Worker(worker),
                task: task_index,
                run,
                sync_seq: Some(seq),
            },
        );
    }

    /// Post-task failure roll; for sync bodies this also gates the result
    /// return and, at the final participant, schedules the resolution.
    fn on_failure_check(&mut self, worker: WorkerId, sync_seq: Option<u64>, now: Time) {
        let failed = if self.worker_alive(worker) {
            roll_failure(self.cfg.params.fail_probability, &mut self.rngs.failure)
        } else {
            false
        };
        if failed {
            self.workers
                .get_mut(&worker)
                .expect("worker exists")
                .state
                .liveness = Liveness::Failed;
            self.barrier_waiting.remove(&worker);
        }
        let Some(seq) = sync_seq else {
            if !failed {
                // A worker that just freed up may owe a barrier arrival.
                self.maybe_barrier_arrival(worker, now);
            }
            return;
        };
        let fog_idx = self.flows[&seq].fog_idx;
        if !failed {
            // Surviving workers return the sync-task result.
            let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
            self.send_message(
                NodeId::Worker(worker),
                ctrl,
                Payload::ResultReturn { sync_seq: seq, worker },
                now,
            );
        }
        let resolve_at = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            flow.exec_outstanding -= 1;
            if flow.exec_outstanding == 0 && flow.starts_outstanding == 0 {
                Some(flow.max_finish + self.cfg.params.controller_worker_delay)
            } else {
                None
            }
        };
        if let Some(at) = resolve_at {
            // Resolution lands one delay after the last finish, after the
            // final result return has been delivered.
            let (ctrl, run, task_index) = (
                self.fogs[fog_idx].ctrl,
                self.fogs[fog_idx].run,
                self.flows[&seq].task_index,
            );
            self.post(
                at,
                EventKind::TaskComplete {
                    node: NodeId::Controller(ctrl),
                    task: task_index,
                    run,
                    sync_seq: Some(seq),
                },
            );
        }
    }

    fn maybe_barrier_arrival(&mut self, worker: WorkerId, now: Time) {
        let Some(&seq) = self.barrier_waiting.get(&worker) else { return };
        let free = self
            .workers
            .get(&worker)
            .map(|rt| rt.state.liveness == Liveness::Connected && rt.state.t_avail <= now)
            .unwrap_or(false);
        if !free {
            return;
        }
        self.barrier_waiting.remove(&worker);
        let fog_idx = {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved {
                return;
            }
            flow.fog_idx
        };
        let ctrl = NodeId::Controller(self.fogs[fog_idx].ctrl);
        self.send_message(
            NodeId::Worker(worker),
            ctrl,
            Payload::BarrierArrival { sync_seq: seq, arrived_at: now },
            now,
        );
    }

    /// Component-redundancy completion test at the resolution point.
    fn on_sync_resolution_event(&mut self, seq: u64, now: Time) {
        let (resolved, results_n, started_n) = {
            let flow = &self.flows[&seq];
            (flow.resolved, flow.results.len(), flow.started.len())
        };
        if resolved {
            return;
        }
        match self.cfg.policy {
            SyncPolicy::ComponentRedundant { .. } => {
                let ok = {
                    let flow = &self.flows[&seq];
                    complete_component_sync(&flow.quorum_clusters, &flow.results)
                };
                match ok {
                    Ok(()) => self.resolve_sync(seq, Ok(()), now, results_n),
                    Err(reason) => self.resolve_sync(seq, Err(reason), now, results_n),
                }
            }
            _ => {
                self.resolve_sync(seq, Ok(()), now, started_n);
            }
        }
    }

    /// Sync resolution: metrics, decision log follow-ups, and resuming the
    /// graph walk.
    fn resolve_sync(
        &mut self,
        seq: u64,
        outcome: Result<(), QuorumFailure>,
        now: Time,
        available: usize,
    ) {
        let (fog_idx, task_index, extra, attempt, participants) = {
            let flow = self.flows.get_mut(&seq).expect("flow exists");
            if flow.resolved {
                return;
            }
            flow.resolved = true;
            flow.state.outcome = match outcome {
                Ok(()) => SyncOutcome::Scheduled {
                    start_time: flow.start_time.unwrap_or(now),
                },
                Err(reason) => SyncOutcome::Aborted { reason },
            };
            (
                flow.fog_idx,
                flow.task_index,
                flow.extra_attempts,
                flow.attempt,
                flow.started.len(),
            )
        };
        if let Err(QuorumFailure::IncompleteResults) = outcome {
            // The completion check is its own logged decision.
            let task = self.task_id_of(fog_idx, task_index);
            self.decisions.push(DecisionRecord {
                t: now,
                sync_task: task.0,
                policy: self.cfg.policy.label(),
                attempt,
                available,
                total: participants,
                result: QuorumFailure::IncompleteResults.label(),
            });
        }
        let resolution = match outcome {
            Ok(()) => SyncResolution::Success,
            Err(reason) => SyncResolution::Failed(reason),
        };
        let task_id = self.task_id_of(fog_idx, task_index);
        let ctrl = self.fogs[fog_idx].ctrl;
        self.collectors[fog_idx]
            .record_sync_outcome(ctrl.0, &task_id, resolution, now, extra)
            .expect("one resolution per sync task per run");
        self.set_ctrl_t(fog_idx, now);
        self.fogs[fog_idx].active_sync = None;
        // A new inter-sync segment begins.
        let seg_start = self.ctrl_t(fog_idx).max(now);
        self.fogs[fog_idx].segment_start = seg_start;
        self.fogs[fog_idx].segment_sum = (0.0, 0.0);
        // Drop any leftover barrier waits for this flow.
        self.barrier_waiting.retain(|_, s| *s != seq);
        self.complete_task(fog_idx, task_index, now);
    }

    fn log_decision(
        &mut self,
        seq: u64,
        t: Time,
        attempt: u32,
        available: usize,
        total: usize,
        result: &QuorumResult,
    ) {
        let (fog_idx, task_index) = {
            let flow = &self.flows[&seq];
            (flow.fog_idx, flow.task_index)
        };
        let task = self.task_id_of(fog_idx, task_index);
        self.decisions.push(DecisionRecord {
            t,
            sync_task: task.0,
            policy: self.cfg.policy.label(),
            attempt,
            available,
            total,
            result: DecisionRecord::result_label(result),
        });
    }

    // -- churn ----------------------------------------------------------

    /// Run boundary: failed workers rejoin, one Bernoulli join roll, next
    /// run starts. Joins never happen mid-run.
    fn on_join_check(&mut self, controller: u32, run: u32, now: Time) {
        let fog_idx = self
            .fogs
            .iter()
            .position(|f| f.ctrl.0 == controller)
            .expect("known controller");
        debug_assert_eq!(self.fogs[fog_idx].run, run);
        // Rejoins: failed and disconnected workers reconnect at run start,
        // so they hold all data needed for the new run.
        let ids: Vec<WorkerId> = self
            .workers
            .iter()
            .filter(|(_, rt)| rt.fog == fog_idx && rt.state.liveness != Liveness::Connected)
            .map(|(id, _)| *id)
            .collect();
        for w in ids {
            let rt = self.workers.get_mut(&w).expect("worker exists");
            rt.state.liveness = Liveness::Connected;
            if rt.state.t_avail < now {
                rt.state.t_avail = now;
            }
        }
        if roll_failure(self.cfg.params.join_probability, &mut self.rngs.join) {
            let new_id = self.spawn_worker(fog_idx, now);
            self.audit.joins += 1;
            self.assign_new_worker_cluster(new_id, fog_idx);
        }
        self.fogs[fog_idx].run += 1;
        if self.fogs[fog_idx].run >= self.cfg.runs {
            self.fogs[fog_idx].finished = true;
            return;
        }
        self.start_run(fog_idx, now);
    }

    fn assign_new_worker_cluster(&mut self, worker: WorkerId, fog_idx: usize) {
        if self.cfg.mobility.is_some() {
            // Folded in at the next mobility grid point.
            return;
        }
        let fogs = self.fogs.len() as u32;
        let per_fog = (self.cfg.cluster_count / fogs).max(1);
        use rand::Rng;
        let pick = self.rngs.assignment.random_range(0..per_fog);
        let cluster = ClusterId(fog_idx as u32 * per_fog + pick);
        let broker = self.fogs[fog_idx].ctrl;
        self.workers
            .get_mut(&worker)
            .expect("worker exists")
            .state
            .cluster_id = Some(cluster);
        self.clusters
            .entry(cluster)
            .or_insert_with(|| Cluster {
                cluster_id: cluster,
                members: BTreeSet::new(),
                broker_controller: broker,
            })
            .members
            .insert(worker);
    }

    // -- event loop -------------------------------------------------------

    /// Dispatches events until the queue drains or the ceiling trips.
    /// Identical (config, seed) pairs produce identical final state.
    pub fn run_until_idle(&mut self) -> Result<(), SimError> {
        while let Some(event) = self.queue.pop() {
            self.audit.events_dispatched += 1;
            if self.audit.events_dispatched > self.cfg.params.max_events {
                return Err(SimError::LivelockGuard(self.cfg.params.max_events));
            }
            self.clock.advance_to(event.timestamp);
            let now = event.timestamp;
            match event.kind {
                EventKind::MessageArrival { from, to, payload } => {
                    self.on_message(from, to, payload, now)
                }
                EventKind::TaskComplete { node, task, run, sync_seq } => {
                    self.on_task_complete(node, task, run, sync_seq, now)
                }
                EventKind::QuorumTimerFire { sync_seq, attempt } => {
                    self.on_quorum_timer(sync_seq, attempt, now)
                }
                EventKind::SlotBoundary { sync_seq } => self.on_slot_boundary(sync_seq, now),
                EventKind::MobilitySample { grid_index } => {
                    self.apply_mobility(grid_index);
                    if self.fogs.iter().any(|f| !f.finished) {
                        self.post(
                            (grid_index + 1) as f64 * self.cfg.mobility_interval_s,
                            EventKind::MobilitySample { grid_index: grid_index + 1 },
                        );
                    }
                }
                EventKind::FailureCheck { worker, sync_seq } => {
                    self.on_failure_check(worker, sync_seq, now)
                }
                EventKind::JoinCheck { controller, run } => {
                    self.on_join_check(controller, run, now)
                }
            }
        }
        debug_assert!(
            self.fogs.iter().all(|f| f.finished),
            "queue drained with unfinished runs"
        );
        Ok(())
    }

    fn on_message(&mut self, from: NodeId, to: NodeId, payload: Payload, now: Time) {
        // Delivery to a failed or disconnected endpoint is dropped; some
        // flows still account for the lost delivery.
        let target_alive = match to {
            NodeId::Worker(w) => self.worker_alive(w),
            NodeId::Controller(_) => true,
        };
        if target_alive {
            self.audit.messages_delivered += 1;
        } else {
            self.audit.messages_dropped += 1;
        }
        match payload {
            Payload::SyncCall { sync_seq, attempt } => {
                if let NodeId::Worker(w) = to {
                    self.on_sync_call(sync_seq, attempt, w, now);
                }
            }
            Payload::StatusUpdate { sync_seq, attempt, predicted_avail } => {
                let NodeId::Worker(sender) = from else { return };
                let report = StatusReport { worker: sender, predicted_avail };
                self.on_status_update(sync_seq, attempt, report, now);
            }
            Payload::GroupAvailability { sync_seq, attempt, cluster, max_predicted_avail } => {
                self.on_group_availability(sync_seq, attempt, cluster, max_predicted_avail, now);
            }
            Payload::BarrierArrival { sync_seq, .. } => self.on_barrier_arrival(sync_seq, now),
            Payload::QuorumCheckTime { sync_seq, attempt, delta } => {
                if let NodeId::Worker(w) = to {
                    if target_alive {
                        self.on_quorum_check_time(sync_seq, attempt, w, delta, now);
                    }
                }
            }
            Payload::StartSyncTask { sync_seq } => {
                if let NodeId::Worker(w) = to {
                    self.on_start_sync_task(sync_seq, w, target_alive, now);
                }
            }
            Payload::ResultReturn { sync_seq, worker } => {
                if let Some(flow) = self.flows.get_mut(&sync_seq) {
                    flow.results.insert(worker);
                }
            }
            Payload::UpcallAck { task, run } => {
                if let NodeId::Worker(w) = to {
                    if target_alive {
                        self.maybe_barrier_arrival(w, now);
                    }
                    // The acknowledgement completes this worker's blocking
                    // upcall regardless of its liveness.
                    let fog_idx = self.workers[&w].fog;
                    if self.fogs[fog_idx].run == run {
                        self.decrement_in_flight(fog_idx, task, now);
                    }
                }
            }
        }
    }

    fn decrement_in_flight(&mut self, fog_idx: usize, task_index: u32, now: Time) {
        let done = {
            let fog = &mut self.fogs[fog_idx];
            match fog.in_flight.get_mut(&task_index) {
                Some(outstanding) => {
                    *outstanding -= 1;
                    *outstanding == 0
                }
                None => false,
            }
        };
        if done {
            self.complete_task(fog_idx, task_index, now);
        }
    }

    fn on_quorum_check_time(
        &mut self,
        seq: u64,
        attempt: u32,
        worker: WorkerId,
        delta: Time,
        now: Time,
    ) {
        let fog_idx = {
            let Some(flow) = self.flows.get(&seq) else { return };
            if flow.resolved || flow.attempt != attempt {
                return;
            }
            flow.fog_idx
        };
        let run = self.fogs[fog_idx].run;
        let finishes: Vec<f64> = {
            let rt = self.workers.get_mut(&worker).expect("worker exists");
            // An idle worker's availability for new work is "now".
            if rt.state.t_avail < now {
                rt.state.t_avail = now;
            }
            let scheduled = local_schedule(&mut rt.state, delta);
            if let Some((_, finish, _)) = scheduled.last() {
                rt.last_filler_finish = *finish;
            }
            scheduled.into_iter().map(|(_, f, _)| f).collect()
        };
        for finish in finishes {
            self.post(
                finish,
                EventKind::TaskComplete {
                    node: NodeId::Worker(worker),
                    task: FILLER_TASK,
                    run,
                    sync_seq: None,
                },
            );
        }
    }

    fn on_task_complete(
        &mut self,
        node: NodeId,
        task_index: u32,
        run: u32,
        sync_seq: Option<u64>,
        now: Time,
    ) {
        match node {
            NodeId::Worker(w) => {
                // The failure roll runs right after, at this same instant;
                // sync resolution bookkeeping rides on it.
                self.post(now, EventKind::FailureCheck { worker: w, sync_seq });
                if sync_seq.is_none() && task_index != FILLER_TASK {
                    let fog_idx = self.workers[&w].fog;
                    // A tail body issued late in one run may outlive it; it
                    // must not touch a same-indexed task of a newer run.
                    if self.fogs[fog_idx].run == run {
                        self.decrement_in_flight(fog_idx, task_index, now);
                    }
                }
            }
            NodeId::Controller(c) => {
                if let Some(seq) = sync_seq {
                    self.on_sync_resolution_event(seq, now);
                } else {
                    let fog_idx = self
                        .fogs
                        .iter()
                        .position(|f| f.ctrl == c)
                        .expect("known controller");
                    if self.fogs[fog_idx].run == run {
                        self.decrement_in_flight(fog_idx, task_index, now);
                    }
                }
            }
        }
    }

    /// Finalizes the replication and hands back all measurements.
    pub fn into_outcome(self) -> RunOutcome {
        let mut records: Vec<MetricsRecord> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for collector in self.collectors {
            let (r, t) = collector.into_records();
            records.extend(r);
            times.extend(t);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        RunOutcome {
            records,
            sync_completion_times: times,
            decisions: self.decisions,
            audit: self.audit,
        }
    }
}


#[cfg(test)]
mod cross_run_tests {
    use super::tests_support::*;
    use super::*;
    use crate::model::TaskSpec;

    /// A tail async body from one run completes during the next run, whose
    /// graph has a gated task at the same index. The stray completion must
    /// not release that task early.
    #[test]
    fn tail_async_bodies_do_not_complete_newer_tasks() {
        let g0 = TaskGraph::new(
            "g0",
            vec![
                TaskSpec::new("t0", TaskKind::ControllerToWorkerSync, 2.0, 0.0, vec![]),
                TaskSpec::new(
                    "t1",
                    TaskKind::ControllerToWorkerAsync,
                    5.0,
                    0.0,
                    vec![TaskId::from("t0")],
                ),
            ],
        );
        let g1 = TaskGraph::new(
            "g1",
            vec![
                TaskSpec::new("t0", TaskKind::ControllerToWorkerAsync, 0.1, 0.0, vec![]),
                TaskSpec::new(
                    "t1",
                    TaskKind::WorkerToControllerSync,
                    50.0,
                    0.0,
                    vec![TaskId::from("t0")],
                ),
            ],
        );
        let cfg = base_config(
            SyncPolicy::TimeRedundant { sync_degree: 0.7, lambda: 20.0, max_retries: 3 },
            2,
            2,
            vec![g0, g1],
        );
        let out = run_base_world(cfg);
        assert_eq!(out.records.len(), 2);
        // Run 1's blocking upcall serializes two 50 s bodies on the
        // controller; its runtime must cover both, not end at the stray
        // completion of run 0's 5 s tail bodies.
        let run1 = &out.records[1];
        assert!(
            run1.runtime_s > 100.0,
            "run 1 must wait for both upcall executions, got {} s",
            run1.runtime_s
        );
    }
}
