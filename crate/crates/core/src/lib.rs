//! Deterministic discrete-event simulator and protocol library for
//! fog-controlled multi-point synchronization.
//!
//! A fog-resident controller coordinates a fleet of single-threaded workers
//! through the task graphs of an application. Synchronous downcalls must
//! start at the same virtual instant on every committed worker; the
//! protocols here get there with time-based redundancy (ratio quorums plus
//! capped retries) or component-based redundancy (per-cluster quorums), an
//! all-worker or publish-subscribe status update scheme, and a worker-side
//! local scheduler that fills the wait before the quorum check with local
//! tasks. Barrier and time-slotted synchronization are included as
//! comparison baselines.
//!
//! The crate splits into:
//!
//! * [`model`] - task graphs, workers, clusters, policies.
//! * [`engine`] - the event queue, virtual clock and world driver.
//! * [`protocols`] - the pure sync-point decision rules.
//! * [`trace`] - duration/mobility traces and synthetic substitutes.
//! * [`metrics`] - collection, aggregation, CSV/JSONL export.
//! * [`experiment`] - config-driven seeded experiment harness.

pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod protocols;
pub mod rng;
pub mod trace;

pub use engine::{RunOutcome, SimError, SimParams, World, WorldAudit, WorldConfig};
pub use experiment::{
    run_experiment, sweep, ExperimentConfig, ExperimentError, ExperimentOutput, SweepOutput,
};
pub use metrics::{aggregate, export_csv, export_jsonl, AggregateReport, MetricsRecord, ReportRow};
pub use model::{
    load_task_graph_json, ready_tasks, sample_duration, validate_task_graph, Cluster, ClusterId,
    ControllerId, ControllerNode, Liveness, NodeId, Position, SyncPolicy, TaskGraph, TaskId,
    TaskKind, TaskSpec, UpdateScheme, WorkerId, WorkerState,
};
pub use protocols::{
    barrier_start_time, cluster_quorum_check, complete_component_sync, compute_quorum_check_time,
    local_schedule, ratio_quorum_check, time_slotted_boundary, time_slotted_quorum, DecisionRecord,
    QuorumFailure, QuorumResult, StatusReport, SyncOutcome, SyncPointState,
};
pub use trace::{
    assign_clusters, emit_duration_csv, emit_mobility_csv, parse_duration_csv, parse_mobility_csv,
    resample, synth_duration_trace, synth_mobility, DurationTrace, MobilitySample, PositionGrid,
};
