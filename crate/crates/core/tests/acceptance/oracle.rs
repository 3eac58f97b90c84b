//! Brute-force timeline calculator for zero-randomness configurations.
//!
//! Re-derives the full virtual timeline of a replication by direct
//! arithmetic over the protocol rules: no event queue, no engine code. Used
//! to pin the simulator's event trace exactly.
//!
//! Scope: single fog, zero failure/join probability, perfect prediction,
//! zero duration stddev, fixed-length gap fillers. Within that scope every
//! quantity below is a closed-form recurrence.

use std::collections::BTreeMap;

use syncsim_core::metrics::MetricsRecord;
use syncsim_core::model::{SyncPolicy, TaskKind, UpdateScheme};
use syncsim_core::protocols::DecisionRecord;
use syncsim_core::WorldConfig;

pub struct OracleOutcome {
    pub records: Vec<MetricsRecord>,
    pub sync_completion_times: Vec<f64>,
    pub decisions: Vec<DecisionRecord>,
}

struct Walk<'c> {
    cfg: &'c WorldConfig,
    d: f64,
    c: f64,
    n: usize,
    cluster_of: Vec<u32>,
    t_avail: Vec<f64>,
    ctrl_t: f64,
    /// Dispatch floor: tasks freed during a sync window dispatch at its
    /// resolution.
    floor: f64,
    seg_start: f64,
    seg_mu: f64,
    seg_var: f64,
    local_queues: Vec<Vec<f64>>,
    records: Vec<MetricsRecord>,
    times: Vec<f64>,
    decisions: Vec<DecisionRecord>,
}

pub fn run(cfg: &WorldConfig) -> OracleOutcome {
    assert_eq!(cfg.fog_count, 1, "oracle models a single fog");
    assert_eq!(cfg.params.fail_probability, 0.0);
    assert_eq!(cfg.params.join_probability, 0.0);
    assert_eq!(cfg.params.prediction_accuracy, 1.0);
    assert_eq!(
        cfg.local_task_min_s, cfg.local_task_max_s,
        "oracle needs fixed-length gap fillers"
    );
    let n = cfg.worker_count as usize;
    // Round-robin static clusters, mirroring the initial fleet build.
    let per_fog = cfg.cluster_count.max(1);
    let cluster_of: Vec<u32> = (0..n as u32).map(|i| i % per_fog).collect();
    let mut walk = Walk {
        cfg,
        d: cfg.params.controller_worker_delay,
        c: cfg.params.status_update_cost,
        n,
        cluster_of,
        t_avail: vec![0.0; n],
        ctrl_t: 0.0,
        floor: 0.0,
        seg_start: 0.0,
        seg_mu: 0.0,
        seg_var: 0.0,
        local_queues: vec![Vec::new(); n],
        records: Vec::new(),
        times: Vec::new(),
        decisions: Vec::new(),
    };
    let mut run_start = 0.0;
    for run in 0..cfg.runs {
        run_start = walk.one_run(run, run_start);
    }
    OracleOutcome {
        records: walk.records,
        sync_completion_times: walk.times,
        decisions: walk.decisions,
    }
}

impl Walk<'_> {
    /// Executes one run of the task graph; returns its end time, which is
    /// also the next run's start.
    fn one_run(&mut self, run: u32, run_start: f64) -> f64 {
        let graph = &self.cfg.graphs[run as usize % self.cfg.graphs.len()];
        let total = graph.tasks.len();
        let index_of: BTreeMap<_, u32> = graph
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.clone(), i as u32))
            .collect();
        for q in &mut self.local_queues {
            *q = vec![self.cfg.local_task_min_s; self.cfg.local_queue_depth as usize];
        }
        self.records.push(MetricsRecord {
            run_index: run,
            ..MetricsRecord::default()
        });
        self.floor = run_start;
        self.seg_start = self.ctrl_t.max(run_start);
        self.seg_mu = 0.0;
        self.seg_var = 0.0;

        let mut completion: Vec<Option<f64>> = vec![None; total];
        let mut done = 0usize;
        while done < total {
            // Engine dispatch order: earliest activation first, ties by
            // ascending task index; activation is capped below by the
            // latest sync resolution.
            let mut best: Option<(f64, usize)> = None;
            for (i, task) in graph.tasks.iter().enumerate() {
                if completion[i].is_some() {
                    continue;
                }
                let mut act = run_start;
                let mut ready = true;
                for p in &task.predecessors {
                    match completion[index_of[p] as usize] {
                        Some(t) => act = act.max(t),
                        None => {
                            ready = false;
                            break;
                        }
                    }
                }
                if !ready {
                    continue;
                }
                let act = act.max(self.floor);
                if best.map_or(true, |(ba, _)| act < ba) {
                    best = Some((act, i));
                }
            }
            let (disp, i) = best.expect("acyclic graph always has a ready task");
            let task = &graph.tasks[i];
            completion[i] = Some(match task.kind {
                TaskKind::ControllerToWorkerAsync => self.async_downcall(task.base_duration, disp, task),
                TaskKind::LocalWorker => self.local_worker(task.base_duration, disp, task),
                TaskKind::LocalController => self.local_controller(task.base_duration, disp),
                TaskKind::WorkerToControllerAsync => self.upcall(task.base_duration, disp, false),
                TaskKind::WorkerToControllerSync => self.upcall(task.base_duration, disp, true),
                TaskKind::ControllerToWorkerSync => {
                    self.sync_point(task.base_duration, disp, task.task_id.as_str())
                }
            });
            done += 1;
        }
        let run_end = completion
            .iter()
            .map(|t| t.expect("all tasks completed"))
            .fold(run_start, f64::max);
        let rec = self.records.last_mut().expect("record exists");
        rec.runtime_s = run_end - run_start;
        run_end
    }

    fn note_segment(&mut self, task: &syncsim_core::TaskSpec) {
        self.seg_mu += task.base_duration;
        self.seg_var += task.duration_stddev * task.duration_stddev;
    }

    /// Fire and forget: the bodies queue on the workers while the walk
    /// moves on at the dispatch instant.
    fn async_downcall(&mut self, base: f64, disp: f64, task: &syncsim_core::TaskSpec) -> f64 {
        self.note_segment(task);
        let eff = self.ctrl_t.max(disp);
        let arrival = eff + self.d;
        for w in 0..self.n {
            let start = self.t_avail[w].max(arrival);
            self.t_avail[w] = start + base;
        }
        disp
    }

    fn local_worker(&mut self, base: f64, disp: f64, task: &syncsim_core::TaskSpec) -> f64 {
        self.note_segment(task);
        for w in 0..self.n {
            let start = self.t_avail[w].max(disp);
            self.t_avail[w] = start + base;
        }
        disp
    }

    fn local_controller(&mut self, base: f64, disp: f64) -> f64 {
        let eff = self.ctrl_t.max(disp);
        self.ctrl_t = eff + base;
        self.ctrl_t
    }

    fn upcall(&mut self, base: f64, disp: f64, blocking: bool) -> f64 {
        // Requests are served in (arrival, worker id) order. Only the
        // blocking variant gates the walk (on its final acknowledgement).
        let mut requests: Vec<(f64, usize)> = (0..self.n)
            .map(|w| (self.t_avail[w].max(disp) + self.d, w))
            .collect();
        requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut completion = disp;
        for (arrival, w) in requests {
            self.ctrl_t = self.ctrl_t.max(arrival) + base;
            if blocking {
                let ack = self.ctrl_t + self.d;
                if self.t_avail[w] < ack {
                    self.t_avail[w] = ack;
                }
                completion = completion.max(ack);
            }
        }
        completion
    }

    fn decision(&mut self, t: f64, task: &str, attempt: u32, available: usize, total: usize, result: &'static str) {
        self.decisions.push(DecisionRecord {
            t,
            sync_task: task.to_string(),
            policy: self.cfg.policy.label(),
            attempt,
            available,
            total,
            result,
        });
    }

    /// Runs the sync task across all workers, updating their availability,
    /// and books a success. Returns the resolution time.
    fn execute_sync(&mut self, base: f64, start: f64, participants: &[usize]) -> f64 {
        let mut max_finish: f64 = start;
        for &w in participants {
            self.t_avail[w] = start + base;
            max_finish = max_finish.max(self.t_avail[w]);
        }
        max_finish + self.d
    }

    fn book(&mut self, success: bool, resolution: f64, quorum_failed: bool) {
        let rec = self.records.last_mut().expect("record exists");
        rec.sync_points += 1;
        if success {
            rec.sync_successes += 1;
            self.times.push(resolution);
        } else if quorum_failed {
            rec.failed_sync_quorum += 1;
        } else {
            rec.failed_sync_incomplete += 1;
        }
        self.ctrl_t = self.ctrl_t.max(resolution);
        self.floor = resolution;
        self.seg_start = self.ctrl_t.max(resolution);
        self.seg_mu = 0.0;
        self.seg_var = 0.0;
    }

    fn sync_point(&mut self, base: f64, disp: f64, task: &str) -> f64 {
        match self.cfg.policy.clone() {
            SyncPolicy::TimeRedundant { sync_degree, .. } => {
                self.quorum_sync(base, disp, task, None, sync_degree)
            }
            SyncPolicy::ComponentRedundant { min_cluster_size } => {
                self.quorum_sync(base, disp, task, Some(min_cluster_size), 0.0)
            }
            SyncPolicy::Barrier {} => self.barrier_sync(base, disp, task),
            SyncPolicy::TimeSlotted { slot_multiplier } => {
                self.slotted_sync(base, disp, task, slot_multiplier)
            }
        }
    }

    /// Shared flow of the redundancy policies: status updates, the quorum
    /// check time, local scheduling, then the policy's own quorum rule.
    fn quorum_sync(
        &mut self,
        base: f64,
        disp: f64,
        task: &str,
        component_min: Option<u32>,
        sync_degree: f64,
    ) -> f64 {
        let t_a = self.ctrl_t.max(disp);
        let call_arr = t_a + self.d;
        // Each worker predicts its remaining work, re-anchored at the call.
        let preds: Vec<f64> = (0..self.n)
            .map(|w| call_arr + (self.t_avail[w] - call_arr).max(0.0))
            .collect();
        // Serial update processing at the controller.
        let upd_arr = call_arr + self.d;
        let mut max_pred = f64::NEG_INFINITY;
        let updates = match self.cfg.update_scheme {
            UpdateScheme::AllWorker => {
                for p in &preds {
                    max_pred = max_pred.max(*p);
                }
                self.n
            }
            UpdateScheme::PublishSubscribe => {
                let mut groups: BTreeMap<u32, f64> = BTreeMap::new();
                for w in 0..self.n {
                    let g = groups.entry(self.cluster_of[w]).or_insert(f64::NEG_INFINITY);
                    *g = g.max(preds[w]);
                }
                for p in groups.values() {
                    max_pred = max_pred.max(*p);
                }
                groups.len()
            }
        };
        let mut t_upd = self.ctrl_t;
        for _ in 0..updates {
            t_upd = t_upd.max(upd_arr) + self.c;
        }
        self.ctrl_t = t_upd;
        self.records.last_mut().expect("record exists").controller_update_messages +=
            updates as u64;
        let delta = (max_pred + self.c + self.d).max(t_upd);
        // The delta broadcast re-anchors idle workers and runs the local
        // scheduler. It
        // lands one delay after the last update; when the quorum timer
        // fires first (delta == t_upd), availability is read pre-broadcast.
        let broadcast_arr = t_upd + self.d;
        let clamp_and_fill = |walk: &mut Self| {
            for w in 0..walk.n {
                if walk.t_avail[w] < broadcast_arr {
                    walk.t_avail[w] = broadcast_arr;
                }
                let mut kept = Vec::new();
                for len in std::mem::take(&mut walk.local_queues[w]) {
                    if walk.t_avail[w] + len <= delta {
                        walk.t_avail[w] += len;
                    } else {
                        kept.push(len);
                    }
                }
                walk.local_queues[w] = kept;
            }
        };
        let pre_clamp = broadcast_arr <= delta;
        if pre_clamp {
            clamp_and_fill(self);
        }
        let available: Vec<usize> = (0..self.n).filter(|w| self.t_avail[*w] <= delta).collect();
        // Perfect prediction: every committed worker is available at delta.
        debug_assert_eq!(available.len(), self.n);
        match component_min {
            None => {
                let ratio = available.len() as f64 / self.n as f64;
                assert!(ratio >= sync_degree, "zero-randomness quorums always pass");
                self.decision(delta, task, 0, available.len(), self.n, "passed");
                if !pre_clamp {
                    clamp_and_fill(self);
                }
                let start = delta + self.d;
                let resolution = self.execute_sync(base, start, &available);
                self.book(true, resolution, false);
                resolution
            }
            Some(m) => {
                // Participating clusters and their available members.
                let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for &w in &available {
                    members.entry(self.cluster_of[w]).or_default().push(w);
                }
                let underfull = members.values().any(|ws| ws.len() < m as usize);
                let clustered: Vec<usize> = members.values().flatten().copied().collect();
                if underfull {
                    // The flow resolves at delta; a broadcast still in
                    // flight is dropped by the stale-attempt guard.
                    self.decision(delta, task, 0, clustered.len(), self.n, "cluster_underfull");
                    self.book(false, delta, true);
                    delta
                } else {
                    self.decision(delta, task, 0, clustered.len(), self.n, "passed");
                    if !pre_clamp {
                        clamp_and_fill(self);
                    }
                    let start = delta + self.d;
                    let resolution = self.execute_sync(base, start, &clustered);
                    self.book(true, resolution, false);
                    resolution
                }
            }
        }
    }

    fn barrier_sync(&mut self, base: f64, disp: f64, task: &str) -> f64 {
        let t_a = self.ctrl_t.max(disp);
        let call_arr = t_a + self.d;
        let timeout_at =
            t_a + 10.0 * self.seg_mu + 10.0 * (2.0 * self.d + self.c * self.n as f64 + 1.0);
        let mut msgs: Vec<(f64, usize)> = (0..self.n)
            .map(|w| (self.t_avail[w].max(call_arr) + self.d, w))
            .collect();
        msgs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut t = self.ctrl_t;
        let mut last_arrival = f64::NEG_INFINITY;
        for (arr, _) in &msgs {
            t = t.max(*arr) + self.c;
            last_arrival = last_arrival.max(*arr);
        }
        self.ctrl_t = t;
        self.records.last_mut().expect("record exists").controller_update_messages +=
            self.n as u64;
        assert!(
            timeout_at > last_arrival,
            "zero-failure barriers complete before the timeout"
        );
        self.decision(last_arrival, task, 0, self.n, self.n, "passed");
        let start = t + self.d;
        let all: Vec<usize> = (0..self.n).collect();
        let resolution = self.execute_sync(base, start, &all);
        self.book(true, resolution, false);
        resolution
    }

    fn slotted_sync(&mut self, base: f64, disp: f64, task: &str, multiplier: f64) -> f64 {
        let eff = self.ctrl_t.max(disp);
        let worker_seg_start = self.seg_start + self.d;
        let slot = worker_seg_start + self.seg_mu + multiplier * self.seg_var.sqrt();
        let fire = slot.max(eff);
        let available: Vec<usize> = (0..self.n).filter(|w| self.t_avail[*w] <= fire).collect();
        let ratio = if self.n == 0 {
            0.0
        } else {
            available.len() as f64 / self.n as f64
        };
        if self.n > 0 && ratio >= self.cfg.slot_sync_degree {
            self.decision(fire, task, 0, available.len(), self.n, "passed");
            let start = fire + self.d;
            let resolution = self.execute_sync(base, start, &available);
            self.book(true, resolution, false);
            resolution
        } else {
            self.decision(fire, task, 0, available.len(), self.n, "retries_exhausted");
            self.book(false, fire, true);
            fire
        }
    }
}
