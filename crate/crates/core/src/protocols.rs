//! Controller/worker sync-point state machines: quorum checks for both
//! redundancy variants, the publish-subscribe and all-worker status update
//! schemes, the worker-side local scheduler, and the barrier / time-slotted
//! baselines.
//!
//! Everything here is a pure function of (state, inputs); the event loop in
//! the engine owns when these run.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{Cluster, ClusterId, TaskId, TaskSpec, WorkerId, WorkerState};

/// Virtual seconds.
type Time = f64;

/// Resolution of one quorum attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum QuorumResult {
    /// Quorum holds; every committed available worker starts at `start_time`.
    Passed { start_time: Time },
    /// Time-based redundancy only: try again at `next_attempt`.
    Retry { next_attempt: Time },
    Failed { reason: QuorumFailure },
}

/// Why a sync point failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuorumFailure {
    /// Ratio quorum missed with no retries left (time-based redundancy).
    RetriesExhausted,
    /// Some cluster fell below the required member count (component-based).
    ClusterUnderfull,
    /// A cluster returned no result after the task ran (component-based).
    IncompleteResults,
    /// A worker never reached the barrier before the timeout.
    BarrierTimeout,
}

impl QuorumFailure {
    pub fn label(self) -> &'static str {
        match self {
            QuorumFailure::RetriesExhausted => "retries_exhausted",
            QuorumFailure::ClusterUnderfull => "cluster_underfull",
            QuorumFailure::IncompleteResults => "incomplete_results",
            QuorumFailure::BarrierTimeout => "barrier_timeout",
        }
    }
}

/// Controller-side state of one sync point attempt sequence.
#[derive(Debug, Clone)]
pub struct SyncPointState {
    pub sync_task: TaskId,
    /// Workers that committed (reported availability) for the current attempt.
    pub committed: BTreeSet<WorkerId>,
    /// Predicted quorum check time of the current attempt.
    pub delta: Option<Time>,
    pub retries_used: u32,
    pub outcome: SyncOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncOutcome {
    Pending,
    Scheduled { start_time: Time },
    Aborted { reason: QuorumFailure },
}

impl SyncPointState {
    pub fn new(sync_task: TaskId) -> Self {
        SyncPointState {
            sync_task,
            committed: BTreeSet::new(),
            delta: None,
            retries_used: 0,
            outcome: SyncOutcome::Pending,
        }
    }
}

/// One worker's availability report as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatusReport {
    pub worker: WorkerId,
    /// Predicted time at which the worker finishes its current work.
    pub predicted_avail: Time,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("quorum check time requested with zero status updates")]
    NoUpdates,
    #[error("worker {0} has no cluster under the publish-subscribe scheme")]
    NoCluster(WorkerId),
}

/// Predicted quorum check time: the latest predicted worker availability
/// plus one status-update processing cost and one command propagation delay.
pub fn compute_quorum_check_time(
    updates: &[StatusReport],
    status_update_cost: f64,
    controller_worker_delay: f64,
) -> Result<Time, ProtocolError> {
    let max_avail = updates
        .iter()
        .map(|u| u.predicted_avail)
        .fold(f64::NEG_INFINITY, f64::max);
    if updates.is_empty() {
        return Err(ProtocolError::NoUpdates);
    }
    Ok(max_avail + status_update_cost + controller_worker_delay)
}

/// Worker-side gap filler: scans the local queue in order and schedules every
/// local task that still fits before `delta`. Tasks that do not fit are
/// skipped and the scan continues. Returns the scheduled tasks in execution
/// order as (start, finish, task) triples.
pub fn local_schedule(worker: &mut WorkerState, delta: Time) -> Vec<(Time, Time, TaskSpec)> {
    let mut scheduled = Vec::new();
    let mut remaining = Vec::new();
    for task in worker.local_queue.drain(..) {
        let t_l = task.base_duration;
        if worker.t_avail + t_l <= delta {
            let start = worker.t_avail;
            worker.t_avail += t_l;
            scheduled.push((start, worker.t_avail, task));
        } else {
            remaining.push(task);
        }
    }
    worker.local_queue = remaining;
    scheduled
}

/// Ratio-based quorum (time redundancy): pass when the available fraction
/// meets the sync degree, otherwise retry after `lambda` while retries
/// remain.
pub fn ratio_quorum_check(
    state: &SyncPointState,
    available: usize,
    total_in_scope: usize,
    sync_degree: f64,
    lambda: f64,
    max_retries: u32,
    delta: Time,
    controller_worker_delay: f64,
) -> QuorumResult {
    let ratio = if total_in_scope == 0 {
        0.0
    } else {
        available as f64 / total_in_scope as f64
    };
    if total_in_scope > 0 && ratio >= sync_degree {
        QuorumResult::Passed {
            start_time: delta + controller_worker_delay,
        }
    } else if total_in_scope > 0 && state.retries_used < max_retries {
        QuorumResult::Retry {
            next_attempt: delta + lambda,
        }
    } else {
        QuorumResult::Failed {
            reason: QuorumFailure::RetriesExhausted,
        }
    }
}

/// Cluster-based quorum (component redundancy): pass iff every participating
/// cluster has at least `min_cluster_size` available members. No retries.
pub fn cluster_quorum_check(
    clusters: &BTreeMap<ClusterId, Cluster>,
    available: &BTreeSet<WorkerId>,
    min_cluster_size: u32,
    delta: Time,
    controller_worker_delay: f64,
) -> QuorumResult {
    if clusters.is_empty() {
        return QuorumResult::Failed {
            reason: QuorumFailure::ClusterUnderfull,
        };
    }
    for cluster in clusters.values() {
        if cluster.members.is_empty() {
            continue; // an empty cluster never participates in a quorum
        }
        let present = cluster.members.iter().filter(|w| available.contains(w)).count();
        if present < min_cluster_size as usize {
            return QuorumResult::Failed {
                reason: QuorumFailure::ClusterUnderfull,
            };
        }
    }
    QuorumResult::Passed {
        start_time: delta + controller_worker_delay,
    }
}

/// Component-redundancy completion rule: the sync task succeeded iff every
/// participating cluster returned at least one result.
pub fn complete_component_sync(
    clusters: &BTreeMap<ClusterId, Cluster>,
    results: &BTreeSet<WorkerId>,
) -> Result<(), QuorumFailure> {
    for cluster in clusters.values() {
        if cluster.members.is_empty() {
            continue;
        }
        if !cluster.members.iter().any(|w| results.contains(w)) {
            return Err(QuorumFailure::IncompleteResults);
        }
    }
    Ok(())
}

/// Barrier rule: execution starts one propagation delay after the last
/// arrival the controller has seen. The caller aborts with
/// [`QuorumFailure::BarrierTimeout`] when not all workers arrive in time.
pub fn barrier_start_time(arrivals: &[Time], controller_worker_delay: f64) -> Option<Time> {
    let max = arrivals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if arrivals.is_empty() {
        None
    } else {
        Some(max + controller_worker_delay)
    }
}

/// Time-slotted rule: the dedicated sync slot sits at
/// `segment_start + mu + slot_multiplier * sigma` and never moves.
pub fn time_slotted_boundary(segment_start: Time, mu: f64, sigma: f64, slot_multiplier: f64) -> Time {
    segment_start + mu + slot_multiplier * sigma
}

/// Quorum test at a fixed slot: same availability ratio rule, no retries.
pub fn time_slotted_quorum(
    available: usize,
    total_in_scope: usize,
    sync_degree: f64,
    slot: Time,
    controller_worker_delay: f64,
) -> QuorumResult {
    let ratio = if total_in_scope == 0 {
        0.0
    } else {
        available as f64 / total_in_scope as f64
    };
    if total_in_scope > 0 && ratio >= sync_degree {
        QuorumResult::Passed {
            start_time: slot + controller_worker_delay,
        }
    } else {
        QuorumResult::Failed {
            reason: QuorumFailure::RetriesExhausted,
        }
    }
}

/// One line of the structured quorum decision log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub sync_task: String,
    pub policy: &'static str,
    pub attempt: u32,
    pub available: usize,
    pub total: usize,
    pub result: &'static str,
}

impl DecisionRecord {
    pub fn result_label(result: &QuorumResult) -> &'static str {
        match result {
            QuorumResult::Passed { .. } => "passed",
            QuorumResult::Retry { .. } => "retry",
            QuorumResult::Failed { reason } => reason.label(),
        }
    }
}

/// Scope and expected-update bookkeeping for the publish-subscribe scheme:
/// returns the clusters represented among `recipients`, i.e. how many group
/// availability messages the controller should expect.
pub fn expected_group_messages(
    recipients: &BTreeSet<WorkerId>,
    membership: &BTreeMap<WorkerId, ClusterId>,
) -> BTreeSet<ClusterId> {
    recipients
        .iter()
        .filter_map(|w| membership.get(w).copied())
        .collect()
}

/// Validates that a worker can take part in the publish-subscribe update
/// scheme at all.
pub fn pubsub_cluster_of(worker: &WorkerState) -> Result<ClusterId, ProtocolError> {
    worker.cluster_id.ok_or(ProtocolError::NoCluster(worker.worker_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControllerId, TaskKind};

    fn report(w: u32, t: Time) -> StatusReport {
        StatusReport {
            worker: WorkerId(w),
            predicted_avail: t,
        }
    }

    fn local_task(id: &str, len: f64) -> TaskSpec {
        TaskSpec::new(id, TaskKind::LocalWorker, len, 0.0, vec![])
    }

    fn cluster(id: u32, members: &[u32]) -> Cluster {
        Cluster {
            cluster_id: ClusterId(id),
            members: members.iter().map(|w| WorkerId(*w)).collect(),
            broker_controller: ControllerId(0),
        }
    }

    #[test]
    fn quorum_check_time_from_max_prediction() {
        // Hand-executed trace: workers at {10, 12, 15}s, update cost 1s,
        // delay 0.2s -> delta = 15 + 1 + 0.2.
        let updates = [report(0, 10.0), report(1, 12.0), report(2, 15.0)];
        let delta = compute_quorum_check_time(&updates, 1.0, 0.2).unwrap();
        assert_eq!(delta, 16.2);
    }

    #[test]
    fn quorum_check_time_single_worker_zero_costs() {
        let updates = [report(0, 5.0)];
        assert_eq!(compute_quorum_check_time(&updates, 0.0, 0.0).unwrap(), 5.0);
    }

    #[test]
    fn quorum_check_time_requires_updates() {
        assert_eq!(
            compute_quorum_check_time(&[], 1.0, 0.2),
            Err(ProtocolError::NoUpdates)
        );
    }

    #[test]
    fn local_schedule_fits_task() {
        let mut w = WorkerState::new(WorkerId(0));
        w.t_avail = 10.0;
        w.local_queue = vec![local_task("l0", 5.0)];
        let done = local_schedule(&mut w, 20.0);
        assert_eq!(done.len(), 1);
        assert_eq!(w.t_avail, 15.0);
        assert!(w.local_queue.is_empty());
    }

    #[test]
    fn local_schedule_skips_oversized_task() {
        let mut w = WorkerState::new(WorkerId(0));
        w.t_avail = 10.0;
        w.local_queue = vec![local_task("l0", 11.0)];
        let done = local_schedule(&mut w, 20.0);
        assert!(done.is_empty());
        assert_eq!(w.t_avail, 10.0);
        assert_eq!(w.local_queue.len(), 1);
    }

    #[test]
    fn local_schedule_boundary_equality_and_scan_order() {
        // Brute-force application of the scan loop: queue [8, 2] from
        // t_avail=10 against delta=20 schedules both, ending exactly at 20.
        let mut w = WorkerState::new(WorkerId(0));
        w.t_avail = 10.0;
        w.local_queue = vec![local_task("l0", 8.0), local_task("l1", 2.0)];
        let done = local_schedule(&mut w, 20.0);
        assert_eq!(done.len(), 2);
        assert_eq!(done[0].0, 10.0);
        assert_eq!(done[0].1, 18.0);
        assert_eq!(done[1].1, 20.0);
        assert_eq!(w.t_avail, 20.0);
    }

    #[test]
    fn local_schedule_skip_then_continue_scanning() {
        // An oversized entry is skipped, not a stopping point: the scan
        // continues to later queue entries.
        let mut w = WorkerState::new(WorkerId(0));
        w.t_avail = 10.0;
        w.local_queue = vec![local_task("l0", 100.0), local_task("l1", 3.0)];
        let done = local_schedule(&mut w, 20.0);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].2.task_id.as_str(), "l1");
        assert_eq!(w.t_avail, 13.0);
        assert_eq!(w.local_queue.len(), 1);
    }

    #[test]
    fn ratio_quorum_boundary_is_inclusive() {
        // 7 of 10 at degree 0.7 passes: r >= sync degree.
        let state = SyncPointState::new(TaskId::from("s"));
        let r = ratio_quorum_check(&state, 7, 10, 0.7, 20.0, 3, 100.0, 0.2);
        assert_eq!(r, QuorumResult::Passed { start_time: 100.2 });
    }

    #[test]
    fn ratio_quorum_retries_after_lambda() {
        let state = SyncPointState::new(TaskId::from("s"));
        let r = ratio_quorum_check(&state, 6, 10, 0.7, 20.0, 3, 100.0, 0.2);
        assert_eq!(r, QuorumResult::Retry { next_attempt: 120.0 });
    }

    #[test]
    fn ratio_quorum_fails_when_retries_exhausted() {
        let mut state = SyncPointState::new(TaskId::from("s"));
        state.retries_used = 3;
        let r = ratio_quorum_check(&state, 6, 10, 0.7, 20.0, 3, 100.0, 0.2);
        assert_eq!(r, QuorumResult::Failed { reason: QuorumFailure::RetriesExhausted });
    }

    #[test]
    fn ratio_quorum_empty_scope_fails_immediately() {
        let state = SyncPointState::new(TaskId::from("s"));
        let r = ratio_quorum_check(&state, 0, 0, 0.7, 20.0, 3, 100.0, 0.2);
        assert_eq!(r, QuorumResult::Failed { reason: QuorumFailure::RetriesExhausted });
    }

    #[test]
    fn monotone_quorum_property() {
        // Adding an available worker never turns a pass into retry/fail.
        let state = SyncPointState::new(TaskId::from("s"));
        for total in 1..20usize {
            for avail in 0..=total {
                let a = ratio_quorum_check(&state, avail, total, 0.7, 20.0, 3, 50.0, 0.2);
                if matches!(a, QuorumResult::Passed { .. }) && avail < total {
                    let b = ratio_quorum_check(&state, avail + 1, total, 0.7, 20.0, 3, 50.0, 0.2);
                    assert!(matches!(b, QuorumResult::Passed { .. }));
                }
            }
        }
    }

    #[test]
    fn cluster_quorum_all_meet_minimum() {
        let clusters: BTreeMap<ClusterId, Cluster> = [
            (ClusterId(0), cluster(0, &[0, 1, 2])),
            (ClusterId(1), cluster(1, &[3, 4, 5, 6])),
            (ClusterId(2), cluster(2, &[7, 8, 9, 10, 11])),
        ]
        .into();
        let available: BTreeSet<WorkerId> = (0..12).map(WorkerId).collect();
        let r = cluster_quorum_check(&clusters, &available, 3, 10.0, 0.2);
        assert_eq!(r, QuorumResult::Passed { start_time: 10.2 });
    }

    #[test]
    fn cluster_quorum_underfull_cluster_fails() {
        let clusters: BTreeMap<ClusterId, Cluster> = [
            (ClusterId(0), cluster(0, &[0, 1, 2])),
            (ClusterId(1), cluster(1, &[3, 4])),
            (ClusterId(2), cluster(2, &[5, 6, 7, 8, 9])),
        ]
        .into();
        let available: BTreeSet<WorkerId> = (0..10).map(WorkerId).collect();
        let r = cluster_quorum_check(&clusters, &available, 3, 10.0, 0.2);
        assert_eq!(r, QuorumResult::Failed { reason: QuorumFailure::ClusterUnderfull });
    }

    #[test]
    fn cluster_quorum_weakest_requirement() {
        let clusters: BTreeMap<ClusterId, Cluster> =
            [(ClusterId(0), cluster(0, &[0])), (ClusterId(1), cluster(1, &[1, 2]))].into();
        let available: BTreeSet<WorkerId> = [WorkerId(0), WorkerId(1)].into();
        let r = cluster_quorum_check(&clusters, &available, 1, 10.0, 0.0);
        assert_eq!(r, QuorumResult::Passed { start_time: 10.0 });
    }

    #[test]
    fn component_completion_needs_every_cluster() {
        let clusters: BTreeMap<ClusterId, Cluster> =
            [(ClusterId(0), cluster(0, &[0, 1])), (ClusterId(1), cluster(1, &[2, 3]))].into();
        let all: BTreeSet<WorkerId> = [WorkerId(0), WorkerId(2)].into();
        assert!(complete_component_sync(&clusters, &all).is_ok());
        let missing: BTreeSet<WorkerId> = [WorkerId(0), WorkerId(1)].into();
        assert_eq!(
            complete_component_sync(&clusters, &missing),
            Err(QuorumFailure::IncompleteResults)
        );
    }

    #[test]
    fn barrier_start_is_max_arrival_plus_delay() {
        assert_eq!(barrier_start_time(&[10.0, 14.0, 30.0], 0.2), Some(30.2));
        assert_eq!(barrier_start_time(&[12.0], 0.2), Some(12.2));
        assert_eq!(barrier_start_time(&[], 0.2), None);
    }

    #[test]
    fn slot_boundary_formula() {
        assert_eq!(time_slotted_boundary(0.0, 100.0, 20.0, 1.5), 130.0);
        assert_eq!(time_slotted_boundary(50.0, 100.0, 0.0, 1.5), 150.0);
    }

    #[test]
    fn slot_with_zero_sigma_admits_identical_workers() {
        // sigma = 0: every identical worker lands exactly on the slot and
        // the inclusive availability test admits all of them.
        let slot = time_slotted_boundary(0.0, 100.0, 0.0, 1.5);
        let avail_count = (0..5)
            .map(|_| 100.0_f64)
            .filter(|t_avail| *t_avail <= slot)
            .count();
        let r = time_slotted_quorum(avail_count, 5, 0.7, slot, 0.2);
        assert_eq!(r, QuorumResult::Passed { start_time: 100.2 });
    }

    #[test]
    fn slot_arrival_probability_matches_normal_tail() {
        // Monte-Carlo oracle against the normal CDF: with slots fixed at
        // mu + 1.5 sigma, the one-sided per-worker arrival-by-slot
        // probability is Phi(1.5) ~= 0.9332 over 1e4 draws.
        use rand::SeedableRng;
        let (mu, sigma) = (100.0, 20.0);
        let slot = time_slotted_boundary(0.0, mu, sigma, 1.5);
        let normal = rand_distr::Normal::new(mu, sigma).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let arrived = (0..n)
            .filter(|_| rand_distr::Distribution::sample(&normal, &mut rng) <= slot)
            .count();
        let rate = arrived as f64 / n as f64;
        assert!((rate - 0.9332).abs() < 0.01, "measured arrival rate {rate}");
    }

    #[test]
    fn expected_group_messages_counts_represented_clusters() {
        let membership: BTreeMap<WorkerId, ClusterId> = [
            (WorkerId(0), ClusterId(0)),
            (WorkerId(1), ClusterId(0)),
            (WorkerId(2), ClusterId(1)),
        ]
        .into();
        let recipients: BTreeSet<WorkerId> = [WorkerId(0), WorkerId(1), WorkerId(2)].into();
        assert_eq!(expected_group_messages(&recipients, &membership).len(), 2);
    }

    #[test]
    fn pubsub_requires_cluster() {
        let mut w = WorkerState::new(WorkerId(4));
        assert_eq!(pubsub_cluster_of(&w), Err(ProtocolError::NoCluster(WorkerId(4))));
        w.cluster_id = Some(ClusterId(2));
        assert_eq!(pubsub_cluster_of(&w), Ok(ClusterId(2)));
    }
}
