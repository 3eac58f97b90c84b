//! Deterministic discrete-event executor: virtual clock, ordered event
//! queue, message latency, failure/join churn and mobility-driven cluster
//! reassignment.

mod world;

pub use world::{RunOutcome, SimError, World, WorldAudit, WorldConfig};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::model::{ClusterId, NodeId, WorkerId};

/// Virtual seconds.
pub type Time = f64;

/// A single shared virtual clock; tight clock synchronization across the
/// tree is assumed, so no skew is modeled.
#[derive(Debug, Clone, Default)]
pub struct Clock {
    now: Time,
}

impl Clock {
    pub fn now(&self) -> Time {
        self.now
    }

    /// Advances to `t`. The clock never goes backwards.
    pub fn advance_to(&mut self, t: Time) {
        debug_assert!(t >= self.now, "clock must be monotone: {} -> {t}", self.now);
        if t > self.now {
            self.now = t;
        }
    }
}

/// Payload carried by a [`MessageArrival`](EventKind::MessageArrival).
/// Tasks travel as dense per-graph indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Controller asks a worker to sign up for a sync task.
    SyncCall { sync_seq: u64, attempt: u32 },
    /// Worker-to-controller availability update (all-worker scheme) with the
    /// predicted availability time of the sender.
    StatusUpdate { sync_seq: u64, attempt: u32, predicted_avail: Time },
    /// One aggregated availability message per cluster (publish-subscribe).
    GroupAvailability {
        sync_seq: u64,
        attempt: u32,
        cluster: ClusterId,
        max_predicted_avail: Time,
    },
    /// Barrier arrival notification carrying the actual arrival time.
    BarrierArrival { sync_seq: u64, arrived_at: Time },
    /// Controller broadcasts the predicted quorum check time delta.
    QuorumCheckTime { sync_seq: u64, attempt: u32, delta: Time },
    /// Controller orders a committed worker to start the sync task.
    StartSyncTask { sync_seq: u64 },
    /// Surviving worker returns the sync-task result.
    ResultReturn { sync_seq: u64, worker: WorkerId },
    /// Controller acknowledges a blocking upcall back to the worker.
    UpcallAck { task: u32, run: u32 },
}

/// What a dispatched event does.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// A message reaches `to`; dropped silently if the endpoint is not
    /// connected at arrival time.
    MessageArrival {
        from: NodeId,
        to: NodeId,
        payload: Payload,
    },
    /// A node finishes executing a task body.
    TaskComplete {
        node: NodeId,
        task: u32,
        run: u32,
        /// Set when this completion belongs to an in-flight sync task.
        sync_seq: Option<u64>,
    },
    /// The quorum decision point for an attempt fires.
    QuorumTimerFire { sync_seq: u64, attempt: u32 },
    /// A pre-fixed time-slotted sync boundary fires.
    SlotBoundary { sync_seq: u64 },
    /// Mobility grid point: worker positions advance, clusters re-form.
    MobilitySample { grid_index: u64 },
    /// Post-task failure roll for a worker.
    FailureCheck {
        worker: WorkerId,
        /// Sync context, when the completed task was a sync task body.
        sync_seq: Option<u64>,
    },
    /// Run-boundary join/rejoin processing for one fog controller.
    JoinCheck { controller: u32, run: u32 },
}

/// A timestamped event. `sequence` breaks ties among equal timestamps, so
/// dispatch order is total and deterministic.
#[derive(Debug, Clone)]
pub struct SimEvent {
    pub timestamp: Time,
    pub sequence: u64,
    pub kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp && self.sequence == other.sequence
    }
}
impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the smallest
        // (timestamp, sequence) first.
        other
            .timestamp
            .total_cmp(&self.timestamp)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Errors from queue operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("event at t={event_t} posted before current time t={now}")]
    TimeTravel { event_t: Time, now: Time },
}

/// The simulator's heart: a priority queue of events dispatched in strictly
/// non-decreasing (timestamp, sequence) order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues `kind` at `timestamp`, assigning the next sequence number.
    pub fn post(&mut self, now: Time, timestamp: Time, kind: EventKind) -> Result<u64, QueueError> {
        if timestamp < now {
            return Err(QueueError::TimeTravel {
                event_t: timestamp,
                now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(SimEvent {
            timestamp,
            sequence,
            kind,
        });
        Ok(sequence)
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Fixed environment parameters of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// One-way controller-worker message latency, seconds.
    pub controller_worker_delay: f64,
    /// Serial controller cost of processing one availability update, seconds.
    pub status_update_cost: f64,
    /// Probability that a worker fails after completing a task.
    pub fail_probability: f64,
    /// Probability that a new worker joins at a run boundary.
    pub join_probability: f64,
    /// Finish-time prediction accuracy in (0, 1]; 1 is a perfect predictor.
    pub prediction_accuracy: f64,
    /// Hard ceiling on dispatched events per replication.
    pub max_events: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.fail_probability) {
            return Err(format!("fail_probability must be in [0,1], got {}", self.fail_probability));
        }
        if !(0.0..=1.0).contains(&self.join_probability) {
            return Err(format!("join_probability must be in [0,1], got {}", self.join_probability));
        }
        if self.controller_worker_delay < 0.0 || self.status_update_cost < 0.0 {
            return Err("delays and costs must be >= 0".to_string());
        }
        if !(self.prediction_accuracy > 0.0 && self.prediction_accuracy <= 1.0) {
            return Err(format!(
                "prediction_accuracy must be in (0,1], got {}",
                self.prediction_accuracy
            ));
        }
        Ok(())
    }
}

/// Perturbs a true finish time by the predictor's multiplicative noise:
/// `true_finish * (1 + u)` with `u ~ U[-(1-a), +(1-a)]`. A perfect predictor
/// returns the input exactly and consumes no randomness.
pub fn predicted_finish<R: rand::Rng + ?Sized>(
    true_finish: Time,
    prediction_accuracy: f64,
    rng: &mut R,
) -> Time {
    debug_assert!(prediction_accuracy > 0.0 && prediction_accuracy <= 1.0);
    let spread = 1.0 - prediction_accuracy;
    if spread == 0.0 {
        return true_finish;
    }
    let u: f64 = rng.random_range(-spread..=spread);
    true_finish * (1.0 + u)
}

/// One post-task failure roll. Returns true when the worker fails.
pub fn roll_failure<R: rand::Rng + ?Sized>(fail_probability: f64, rng: &mut R) -> bool {
    if fail_probability <= 0.0 {
        return false;
    }
    if fail_probability >= 1.0 {
        return true;
    }
    rng.random_range(0.0..1.0) < fail_probability
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noop() -> EventKind {
        EventKind::JoinCheck { controller: 0, run: 0 }
    }

    #[test]
    fn equal_timestamps_dispatch_in_sequence_order() {
        let mut q = EventQueue::new();
        let s5 = q.post(0.0, 1.0, noop()).unwrap();
        let s6 = q.post(0.0, 1.0, noop()).unwrap();
        assert!(s5 < s6);
        assert_eq!(q.pop().unwrap().sequence, s5);
        assert_eq!(q.pop().unwrap().sequence, s6);
    }

    #[test]
    fn post_at_now_is_dispatched() {
        let mut q = EventQueue::new();
        q.post(10.0, 10.0, noop()).unwrap();
        assert_eq!(q.pop().unwrap().timestamp, 10.0);
    }

    #[test]
    fn post_in_the_past_is_time_travel() {
        let mut q = EventQueue::new();
        let err = q.post(10.0, 9.0, noop()).unwrap_err();
        assert_eq!(err, QueueError::TimeTravel { event_t: 9.0, now: 10.0 });
    }

    #[test]
    fn dispatch_order_is_nondecreasing() {
        let mut q = EventQueue::new();
        for t in [5.0, 1.0, 3.0, 1.0, 4.0, 2.0] {
            q.post(0.0, t, noop()).unwrap();
        }
        let mut last = f64::NEG_INFINITY;
        while let Some(e) = q.pop() {
            assert!(e.timestamp >= last);
            last = e.timestamp;
        }
    }

    #[test]
    fn predicted_finish_perfect_accuracy_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(predicted_finish(50.0, 1.0, &mut rng), 50.0);
    }

    #[test]
    fn predicted_finish_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = predicted_finish(100.0, 0.8, &mut rng);
            assert!((80.0..=120.0).contains(&p), "out of bounds: {p}");
        }
    }

    #[test]
    fn predicted_finish_mean_is_unbiased() {
        // Sample-mean oracle: mean of 1e5 draws within 100 +/- 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| predicted_finish(100.0, 0.8, &mut rng)).sum();
        let mean = sum / n as f64;
        assert!((mean - 100.0).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn failure_roll_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(!roll_failure(0.0, &mut rng));
        assert!(roll_failure(1.0, &mut rng));
    }

    #[test]
    fn failure_roll_frequency() {
        // Frequency oracle: 1e4 rolls at p=0.1 land within 0.1 +/- 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let fails = (0..n).filter(|_| roll_failure(0.1, &mut rng)).count();
        let frac = fails as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "fraction {frac}");
    }
}
