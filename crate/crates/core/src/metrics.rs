//! Collection, aggregation and export of the simulator's measurements.
//!
//! All quantities are virtual-time; the synchronization rate is a sliding
//! 10 s window with 1 s step, reporting the maximum window count.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::TaskId;
use crate::protocols::QuorumFailure;

/// Per-run measurements.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRecord {
    pub run_index: u32,
    /// Virtual duration of the run.
    pub runtime_s: f64,
    /// Sync tasks attempted in the run.
    pub sync_points: u64,
    /// Quorum attempts beyond the first, summed over sync points.
    pub extra_quorum_attempts: u64,
    /// Sync tasks failed at quorum (retries exhausted, underfull cluster,
    /// barrier timeout or missed slot).
    pub failed_sync_quorum: u64,
    /// Sync tasks failed on incomplete cluster results.
    pub failed_sync_incomplete: u64,
    /// Availability updates processed serially by controllers.
    pub controller_update_messages: u64,
    pub sync_successes: u64,
}

/// How a single sync task resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncResolution {
    Success,
    Failed(QuorumFailure),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("sync outcome for task {0} recorded twice")]
    DuplicateRecord(TaskId),
    #[error("cannot aggregate an empty record set")]
    EmptyInput,
}

/// Single-owner per-replication collector. Sync outcomes are guarded by a
/// per-(run, controller, task) seen-set; double recording is a caller bug.
#[derive(Debug, Clone, Default)]
pub struct Collector {
    records: Vec<MetricsRecord>,
    current: MetricsRecord,
    seen: BTreeSet<(u32, u32, TaskId)>,
    run_start: f64,
    /// Virtual timestamps of completed synchronizations, for SR windows.
    pub sync_completion_times: Vec<f64>,
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_run(&mut self, run_index: u32, now: f64) {
        self.current = MetricsRecord {
            run_index,
            ..MetricsRecord::default()
        };
        self.run_start = now;
    }

    pub fn end_run(&mut self, now: f64) {
        self.current.runtime_s = now - self.run_start;
        self.records.push(std::mem::take(&mut self.current));
    }

    /// Records the resolution of one sync task.
    pub fn record_sync_outcome(
        &mut self,
        controller: u32,
        task: &TaskId,
        resolution: SyncResolution,
        resolved_at: f64,
        extra_attempts: u32,
    ) -> Result<(), MetricsError> {
        let key = (self.current.run_index, controller, task.clone());
        if !self.seen.insert(key) {
            return Err(MetricsError::DuplicateRecord(task.clone()));
        }
        self.current.sync_points += 1;
        self.current.extra_quorum_attempts += extra_attempts as u64;
        match resolution {
            SyncResolution::Success => {
                self.current.sync_successes += 1;
                self.sync_completion_times.push(resolved_at);
            }
            SyncResolution::Failed(QuorumFailure::IncompleteResults) => {
                self.current.failed_sync_incomplete += 1;
            }
            SyncResolution::Failed(_) => {
                self.current.failed_sync_quorum += 1;
            }
        }
        Ok(())
    }

    pub fn count_update_message(&mut self) {
        self.current.controller_update_messages += 1;
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn into_records(self) -> (Vec<MetricsRecord>, Vec<f64>) {
        (self.records, self.sync_completion_times)
    }
}

/// Maximum number of timestamps inside any sliding window of `window`
/// seconds, swept at `step` granularity.
pub fn max_rate_per_window(times: &[f64], window: f64, step: f64) -> u64 {
    if times.is_empty() {
        return 0;
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let first = sorted[0];
    let last = *sorted.last().expect("non-empty");
    let mut best = 0u64;
    let mut lo = 0usize;
    let mut hi = 0usize;
    // Window starts on the step grid; [start, start + window).
    let mut start = (first / step).floor() * step - window + step;
    if start < 0.0 {
        start = 0.0;
    }
    while start <= last {
        let end = start + window;
        while hi < sorted.len() && sorted[hi] < end {
            hi += 1;
        }
        while lo < hi && sorted[lo] < start {
            lo += 1;
        }
        best = best.max((hi - lo) as u64);
        start += step;
    }
    best
}

/// Aggregate over an ensemble of runs (usually all runs of all replications
/// of one configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// Pooled total runtime / total sync points.
    pub runtime_per_sync_point_mean: f64,
    /// Population standard deviation of per-record runtime-per-sync-point.
    pub runtime_per_sync_point_stddev: f64,
    pub pct_failed_quorum: f64,
    pub pct_failed_incomplete: f64,
    /// Ensemble mean over replications of the maximum synchronizations
    /// observed in any 10 s window.
    pub max_sync_rate_per_10s: f64,
    pub total_runs: u64,
    pub total_sync_points: u64,
    pub total_extra_attempts: u64,
    pub total_update_messages: u64,
    pub total_successes: u64,
}

/// SR window length (seconds) and sweep step.
pub const SR_WINDOW_S: f64 = 10.0;
pub const SR_STEP_S: f64 = 1.0;

/// Pools runs into the reported aggregates. `sync_times` holds
/// one vector of success timestamps per replication; the SR window sweep
/// runs inside each replication, never across them.
pub fn aggregate(
    records: &[MetricsRecord],
    sync_times: &[Vec<f64>],
) -> Result<AggregateReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total_runtime: f64 = records.iter().map(|r| r.runtime_s).sum();
    let total_syncs: u64 = records.iter().map(|r| r.sync_points).sum();
    let total_fail_q: u64 = records.iter().map(|r| r.failed_sync_quorum).sum();
    let total_fail_i: u64 = records.iter().map(|r| r.failed_sync_incomplete).sum();
    let total_success: u64 = records.iter().map(|r| r.sync_successes).sum();
    let total_extra: u64 = records.iter().map(|r| r.extra_quorum_attempts).sum();
    let total_msgs: u64 = records.iter().map(|r| r.controller_update_messages).sum();

    let mean = if total_syncs == 0 {
        0.0
    } else {
        total_runtime / total_syncs as f64
    };
    let per_record: Vec<f64> = records
        .iter()
        .filter(|r| r.sync_points > 0)
        .map(|r| r.runtime_s / r.sync_points as f64)
        .collect();
    let stddev = if per_record.len() < 2 {
        0.0
    } else {
        let m = per_record.iter().sum::<f64>() / per_record.len() as f64;
        (per_record.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / per_record.len() as f64)
            .sqrt()
    };
    let pct = |n: u64| {
        if total_syncs == 0 {
            0.0
        } else {
            n as f64 / total_syncs as f64 * 100.0
        }
    };
    let sr_mean = if sync_times.is_empty() {
        0.0
    } else {
        sync_times
            .iter()
            .map(|t| max_rate_per_window(t, SR_WINDOW_S, SR_STEP_S) as f64)
            .sum::<f64>()
            / sync_times.len() as f64
    };
    Ok(AggregateReport {
        runtime_per_sync_point_mean: mean,
        runtime_per_sync_point_stddev: stddev,
        pct_failed_quorum: pct(total_fail_q),
        pct_failed_incomplete: pct(total_fail_i),
        max_sync_rate_per_10s: sr_mean,
        total_runs: records.len() as u64,
        total_sync_points: total_syncs,
        total_extra_attempts: total_extra,
        total_update_messages: total_msgs,
        total_successes: total_success,
    })
}

/// Formats a float with 6 significant digits, stable across runs.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if magnitude > 5 {
        // Round to 6 significant digits above the decimal point.
        let scale = 10f64.powi(magnitude - 5);
        return format!("{}", (x / scale).round() * scale);
    }
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Trim trailing zeros but keep integer part intact.
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        s
    }
}

/// One exported row: the configuration key plus its aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub policy: String,
    pub update_scheme: String,
    pub workers: u32,
    pub clusters: u32,
    pub min_cluster_size: u32,
    pub sync_degree: f64,
    pub lambda_s: f64,
    pub retries: u32,
    pub accuracy: f64,
    pub seed: u64,
    pub aggregate: AggregateReport,
}

pub const REPORT_CSV_HEADER: &str = "policy,update_scheme,workers,clusters,min_cluster_size,sync_degree,lambda_s,retries,accuracy,seed,runtime_per_sync_s,pct_fail_quorum,pct_fail_incomplete,extra_attempts,ctrl_msgs,max_sr_per_10s";

/// Renders rows to the report CSV with a deterministic column order and
/// stable float formatting.
pub fn export_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let a = &r.aggregate;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.update_scheme,
            r.workers,
            r.clusters,
            r.min_cluster_size,
            fmt_sig6(r.sync_degree),
            fmt_sig6(r.lambda_s),
            r.retries,
            fmt_sig6(r.accuracy),
            r.seed,
            fmt_sig6(a.runtime_per_sync_point_mean),
            fmt_sig6(a.pct_failed_quorum),
            fmt_sig6(a.pct_failed_incomplete),
            a.total_extra_attempts,
            a.total_update_messages,
            fmt_sig6(a.max_sync_rate_per_10s),
        )
        .expect("write to string cannot fail");
    }
    out
}

/// Renders rows as JSONL, one object per configuration key, keys sorted.
pub fn export_jsonl(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let a = &r.aggregate;
        // serde_json on a BTreeMap gives sorted keys.
        let mut obj = std::collections::BTreeMap::new();
        let mut num =
            |k: &str, v: serde_json::Value| obj.insert(k.to_string(), v);
        num("policy", serde_json::Value::String(r.policy.clone()));
        num("update_scheme", serde_json::Value::String(r.update_scheme.clone()));
        num("workers", r.workers.into());
        num("clusters", r.clusters.into());
        num("min_cluster_size", r.min_cluster_size.into());
        num("sync_degree", json_f64(r.sync_degree));
        num("lambda_s", json_f64(r.lambda_s));
        num("retries", r.retries.into());
        num("accuracy", json_f64(r.accuracy));
        num("seed", r.seed.into());
        num("runtime_per_sync_s", json_f64(a.runtime_per_sync_point_mean));
        num("runtime_per_sync_stddev", json_f64(a.runtime_per_sync_point_stddev));
        num("pct_fail_quorum", json_f64(a.pct_failed_quorum));
        num("pct_fail_incomplete", json_f64(a.pct_failed_incomplete));
        num("extra_attempts", a.total_extra_attempts.into());
        num("ctrl_msgs", a.total_update_messages.into());
        num("max_sr_per_10s", json_f64(a.max_sync_rate_per_10s));
        num("total_runs", a.total_runs.into());
        num("total_sync_points", a.total_sync_points.into());
        num("sync_successes", a.total_successes.into());
        out.push_str(&serde_json::to_string(&obj).expect("serializable"));
        out.push('\n');
    }
    out
}

fn json_f64(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_record(syncs: u64, ok: u64, fq: u64, fi: u64, runtime: f64) -> MetricsRecord {
        MetricsRecord {
            run_index: 0,
            runtime_s: runtime,
            sync_points: syncs,
            extra_quorum_attempts: 0,
            failed_sync_quorum: fq,
            failed_sync_incomplete: fi,
            controller_update_messages: 0,
            sync_successes: ok,
        }
    }

    #[test]
    fn record_one_success() {
        let mut c = Collector::new();
        c.begin_run(0, 0.0);
        c.record_sync_outcome(0, &TaskId::from("s"), SyncResolution::Success, 5.0, 0)
            .unwrap();
        c.end_run(10.0);
        assert_eq!(c.records()[0].sync_successes, 1);
        assert_eq!(c.records()[0].sync_points, 1);
    }

    #[test]
    fn record_failed_with_attempts() {
        let mut c = Collector::new();
        c.begin_run(0, 0.0);
        c.record_sync_outcome(
            0,
            &TaskId::from("s"),
            SyncResolution::Failed(QuorumFailure::RetriesExhausted),
            5.0,
            3,
        )
        .unwrap();
        c.end_run(10.0);
        assert_eq!(c.records()[0].failed_sync_quorum, 1);
        assert_eq!(c.records()[0].extra_quorum_attempts, 3);
    }

    #[test]
    fn duplicate_record_is_rejected() {
        let mut c = Collector::new();
        c.begin_run(0, 0.0);
        c.record_sync_outcome(0, &TaskId::from("s"), SyncResolution::Success, 5.0, 0)
            .unwrap();
        let err = c
            .record_sync_outcome(0, &TaskId::from("s"), SyncResolution::Success, 6.0, 0)
            .unwrap_err();
        assert_eq!(err, MetricsError::DuplicateRecord(TaskId::from("s")));
    }

    #[test]
    fn aggregate_runtime_per_sync_point() {
        // 200 runs, 5 syncs each, one million seconds total -> 1000 s/sync.
        let records: Vec<MetricsRecord> =
            (0..200).map(|_| run_record(5, 5, 0, 0, 5000.0)).collect();
        let report = aggregate(&records, &[]).unwrap();
        assert_eq!(report.runtime_per_sync_point_mean, 1_000_000.0 / (200.0 * 5.0));
        assert_eq!(report.pct_failed_quorum, 0.0);
        assert_eq!(report.pct_failed_incomplete, 0.0);
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert_eq!(aggregate(&[], &[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn conservation_of_sync_outcomes() {
        let records = vec![run_record(10, 6, 3, 1, 100.0)];
        let r = &records[0];
        assert_eq!(r.sync_points, r.sync_successes + r.failed_sync_quorum + r.failed_sync_incomplete);
        let report = aggregate(&records, &[]).unwrap();
        assert_eq!(report.pct_failed_quorum, 30.0);
        assert_eq!(report.pct_failed_incomplete, 10.0);
    }

    #[test]
    fn max_window_rate_brute_force_case() {
        // Brute-force window sweep: all of {1, 4, 9} fit inside [0, 10).
        assert_eq!(max_rate_per_window(&[1.0, 4.0, 9.0], 10.0, 1.0), 3);
        // Spread out beyond one window.
        assert_eq!(max_rate_per_window(&[0.0, 11.0, 22.0], 10.0, 1.0), 1);
        assert_eq!(max_rate_per_window(&[], 10.0, 1.0), 0);
    }

    #[test]
    fn max_window_matches_exhaustive_sweep() {
        let times = [0.5, 2.0, 3.0, 9.5, 10.4, 15.0, 15.5, 16.0, 24.9];
        let fast = max_rate_per_window(&times, 10.0, 1.0);
        let mut brute = 0;
        let mut start = -10.0;
        while start < 30.0 {
            let count = times.iter().filter(|t| **t >= start && **t < start + 10.0).count();
            brute = brute.max(count as u64);
            start += 1.0;
        }
        assert_eq!(fast, brute);
    }

    #[test]
    fn aggregation_linearity() {
        // Aggregating a concatenation equals the weighted-mean combine.
        let a: Vec<MetricsRecord> = (0..3).map(|_| run_record(4, 4, 0, 0, 40.0)).collect();
        let b: Vec<MetricsRecord> = (0..5).map(|_| run_record(2, 1, 1, 0, 30.0)).collect();
        let whole: Vec<MetricsRecord> = a.iter().chain(b.iter()).cloned().collect();
        let ra = aggregate(&a, &[]).unwrap();
        let rb = aggregate(&b, &[]).unwrap();
        let rw = aggregate(&whole, &[]).unwrap();
        let wa = ra.total_sync_points as f64;
        let wb = rb.total_sync_points as f64;
        let combined =
            (ra.runtime_per_sync_point_mean * wa + rb.runtime_per_sync_point_mean * wb) / (wa + wb);
        assert!((rw.runtime_per_sync_point_mean - combined).abs() < 1e-12);
    }

    #[test]
    fn export_determinism_and_header() {
        let rows = vec![ReportRow {
            policy: "time_redundant".into(),
            update_scheme: "all_worker".into(),
            workers: 10,
            clusters: 5,
            min_cluster_size: 1,
            sync_degree: 0.7,
            lambda_s: 20.0,
            retries: 3,
            accuracy: 1.0,
            seed: 42,
            aggregate: aggregate(&[run_record(5, 5, 0, 0, 5000.0)], &[vec![1.0, 4.0, 9.0]]).unwrap(),
        }];
        let a = export_csv(&rows);
        let b = export_csv(&rows);
        assert_eq!(a, b);
        assert!(a.starts_with(REPORT_CSV_HEADER));
        let empty = export_csv(&[]);
        assert_eq!(empty, format!("{REPORT_CSV_HEADER}\n"));
        // JSONL keys come out sorted.
        let line = export_jsonl(&rows);
        let obj: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = obj.as_object().unwrap().keys().map(String::as_str).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1234.56789), "1234.57");
        assert_eq!(fmt_sig6(0.000123456789), "0.000123457");
        assert_eq!(fmt_sig6(1000000.0), "1000000");
        assert_eq!(fmt_sig6(12345678.9), "12345700");
        assert_eq!(fmt_sig6(0.7), "0.7");
    }
}
