//! Config-driven experiment runner: seeded replications, parameter sweeps
//! with aligned seeds, and deterministic output files.


use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RunOutcome, SimError, SimParams, World, WorldConfig};
use crate::metrics::{aggregate, export_csv, AggregateReport, MetricsError, ReportRow};
use crate::model::{
    validate_task_graph, GraphLoadError, SyncPolicy, TaskGraph, TaskId, TaskKind, TaskSpec,
    UpdateScheme,
};
use crate::trace::{parse_mobility_csv, resample, synth_mobility, ParseError, PositionGrid};

/// Default experiment parameters; everything not set in a config file
/// falls back to these.
pub mod defaults {
    pub const WORKER_COUNT: u32 = 10;
    pub const CLUSTER_COUNT: u32 = 5;
    pub const MIN_CLUSTER_SIZE: u32 = 1;
    pub const SYNC_DEGREE: f64 = 0.7;
    pub const LAMBDA_S: f64 = 20.0;
    pub const MAX_RETRIES: u32 = 3;
    pub const SLOT_MULTIPLIER: f64 = 1.5;
    pub const PREDICTION_ACCURACY: f64 = 1.0;
    pub const FAIL_PROBABILITY: f64 = 0.1;
    pub const JOIN_PROBABILITY: f64 = 0.1;
    pub const CONTROLLER_WORKER_DELAY_S: f64 = 0.2;
    pub const STATUS_UPDATE_COST_S: f64 = 1.0;
    pub const RUNS_PER_REPLICATION: u32 = 200;
    pub const REPLICATIONS: u32 = 100;
    pub const SEED: u64 = 42;
    pub const GRAPH_COUNT: u32 = 10;
    pub const TOTAL_TASKS: u32 = 30;
    pub const SYNC_FRACTION: f64 = 0.2;
    pub const LOCAL_QUEUE_DEPTH: u32 = 2;
    pub const LOCAL_TASK_MIN_S: f64 = 1.0;
    pub const LOCAL_TASK_MAX_S: f64 = 10.0;
    pub const DURATION_MIN_S: f64 = 23.0;
    pub const DURATION_MAX_S: f64 = 269.0;
    pub const DURATION_STDDEV_FRAC: f64 = 0.1;
    pub const MAX_EVENTS: u64 = 50_000_000;
    pub const RESAMPLE_INTERVAL_S: f64 = 30.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    TimeRedundant,
    ComponentRedundant,
    Barrier,
    TimeSlotted,
}

/// Composition of the generated task graphs, or explicit graph files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskGraphSpec {
    pub count: u32,
    pub total_tasks: u32,
    /// Fraction of graph tasks that are sync points; the actual count
    /// varies across graphs around this target.
    pub sync_fraction: f64,
    pub local_queue_depth: u32,
    pub local_task_min_s: f64,
    pub local_task_max_s: f64,
    pub duration_min_s: f64,
    pub duration_max_s: f64,
    pub duration_stddev_frac: f64,
    /// Explicit task-graph JSON documents; overrides generation.
    pub files: Option<Vec<String>>,
}

impl Default for TaskGraphSpec {
    fn default() -> Self {
        TaskGraphSpec {
            count: defaults::GRAPH_COUNT,
            total_tasks: defaults::TOTAL_TASKS,
            sync_fraction: defaults::SYNC_FRACTION,
            local_queue_depth: defaults::LOCAL_QUEUE_DEPTH,
            local_task_min_s: defaults::LOCAL_TASK_MIN_S,
            local_task_max_s: defaults::LOCAL_TASK_MAX_S,
            duration_min_s: defaults::DURATION_MIN_S,
            duration_max_s: defaults::DURATION_MAX_S,
            duration_stddev_frac: defaults::DURATION_STDDEV_FRAC,
            files: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    // Struct variants throughout: serde ignores deny_unknown_fields on
    // unit variants of tagged enums, and typos must not pass silently.
    Single {},
    Hierarchical { fog_count: u32 },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Single {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySpec {
    None {},
    RandomWaypoint {
        node_count: u32,
        duration_s: f64,
        speed_mps: f64,
        box_m: f64,
        #[serde(default = "default_interval")]
        resample_interval_s: f64,
    },
    TraceCsv {
        path: String,
        #[serde(default = "default_interval")]
        resample_interval_s: f64,
    },
}

fn default_interval() -> f64 {
    defaults::RESAMPLE_INTERVAL_S
}

impl Default for MobilitySpec {
    fn default() -> Self {
        MobilitySpec::None {}
    }
}

/// The full experiment configuration. Unknown keys are rejected so typos
/// cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub policy: PolicyKind,
    pub update_scheme: UpdateScheme,
    pub worker_count: u32,
    pub cluster_count: u32,
    pub min_cluster_size: u32,
    pub sync_degree: f64,
    pub lambda_s: f64,
    pub max_retries: u32,
    pub slot_multiplier: f64,
    pub barrier_timeout_s: Option<f64>,
    pub prediction_accuracy: f64,
    pub fail_probability: f64,
    pub join_probability: f64,
    pub controller_worker_delay_s: f64,
    pub status_update_cost_s: f64,
    pub task_graphs: TaskGraphSpec,
    pub runs_per_replication: u32,
    pub replications: u32,
    pub seed: u64,
    pub controller_topology: TopologySpec,
    pub mobility: MobilitySpec,
    pub max_events: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            policy: PolicyKind::TimeRedundant,
            update_scheme: UpdateScheme::AllWorker,
            worker_count: defaults::WORKER_COUNT,
            cluster_count: defaults::CLUSTER_COUNT,
            min_cluster_size: defaults::MIN_CLUSTER_SIZE,
            sync_degree: defaults::SYNC_DEGREE,
            lambda_s: defaults::LAMBDA_S,
            max_retries: defaults::MAX_RETRIES,
            slot_multiplier: defaults::SLOT_MULTIPLIER,
            barrier_timeout_s: None,
            prediction_accuracy: defaults::PREDICTION_ACCURACY,
            fail_probability: defaults::FAIL_PROBABILITY,
            join_probability: defaults::JOIN_PROBABILITY,
            controller_worker_delay_s: defaults::CONTROLLER_WORKER_DELAY_S,
            status_update_cost_s: defaults::STATUS_UPDATE_COST_S,
            task_graphs: TaskGraphSpec::default(),
            runs_per_replication: defaults::RUNS_PER_REPLICATION,
            replications: defaults::REPLICATIONS,
            seed: defaults::SEED,
            controller_topology: TopologySpec::Single {},
            mobility: MobilitySpec::None {},
            max_events: defaults::MAX_EVENTS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphLoadError),
    #[error("mobility trace: {0}")]
    Trace(#[from] ParseError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExperimentConfig {
    /// Parses a JSON config document; an empty document means all defaults.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let trimmed = text.trim();
        let cfg: ExperimentConfig = if trimmed.is_empty() {
            ExperimentConfig::default()
        } else {
            serde_json::from_str(trimmed).map_err(|e| {
                let msg = e.to_string();
                if let Some(rest) = msg.strip_prefix("unknown field `") {
                    if let Some(end) = rest.find('`') {
                        return ExperimentError::UnknownKey(rest[..end].to_string());
                    }
                }
                ExperimentError::Parse(msg)
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |field: &str, reason: String| {
            Err(ExperimentError::Validation { field: field.to_string(), reason })
        };
        if !(self.sync_degree > 0.0 && self.sync_degree <= 1.0) {
            return err("sync_degree", format!("must be in (0,1], got {}", self.sync_degree));
        }
        if !(self.lambda_s > 0.0) {
            return err("lambda_s", format!("must be > 0, got {}", self.lambda_s));
        }
        if self.min_cluster_size < 1 {
            return err("min_cluster_size", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.fail_probability) {
            return err("fail_probability", format!("must be in [0,1], got {}", self.fail_probability));
        }
        if !(0.0..=1.0).contains(&self.join_probability) {
            return err("join_probability", format!("must be in [0,1], got {}", self.join_probability));
        }
        if !(self.prediction_accuracy > 0.0 && self.prediction_accuracy <= 1.0) {
            return err(
                "prediction_accuracy",
                format!("must be in (0,1], got {}", self.prediction_accuracy),
            );
        }
        if self.controller_worker_delay_s < 0.0 {
            return err("controller_worker_delay_s", "must be >= 0".into());
        }
        if self.status_update_cost_s < 0.0 {
            return err("status_update_cost_s", "must be >= 0".into());
        }
        if self.worker_count == 0 {
            return err("worker_count", "must be >= 1".into());
        }
        if self.cluster_count == 0 {
            return err("cluster_count", "must be >= 1".into());
        }
        if self.replications == 0 {
            return err("replications", "must be >= 1".into());
        }
        if let TopologySpec::Hierarchical { fog_count } = self.controller_topology {
            if fog_count < 1 {
                return err("controller_topology.fog_count", "must be >= 1".into());
            }
        }
        let tg = &self.task_graphs;
        if tg.files.is_none() {
            if tg.count == 0 || tg.total_tasks == 0 {
                return err("task_graphs", "count and total_tasks must be >= 1".into());
            }
            if !(tg.sync_fraction >= 0.0 && tg.sync_fraction <= 1.0) {
                return err("task_graphs.sync_fraction", "must be in [0,1]".into());
            }
            if !(tg.duration_min_s > 0.0 && tg.duration_min_s <= tg.duration_max_s) {
                return err("task_graphs.duration_min_s", "need 0 < min <= max".into());
            }
            if tg.duration_stddev_frac < 0.0 {
                return err("task_graphs.duration_stddev_frac", "must be >= 0".into());
            }
        }
        match &self.mobility {
            MobilitySpec::RandomWaypoint { node_count, duration_s, speed_mps, box_m, resample_interval_s } => {
                if *node_count == 0 || *duration_s <= 0.0 || *box_m <= 0.0 || *resample_interval_s <= 0.0 {
                    return err("mobility", "random_waypoint parameters must be positive".into());
                }
                if *speed_mps < 0.0 {
                    return err("mobility.speed_mps", "must be >= 0".into());
                }
            }
            MobilitySpec::TraceCsv { resample_interval_s, .. } => {
                if *resample_interval_s <= 0.0 {
                    return err("mobility.resample_interval_s", "must be > 0".into());
                }
            }
            MobilitySpec::None {} => {}
        }
        Ok(())
    }

    fn policy(&self) -> SyncPolicy {
        match self.policy {
            PolicyKind::TimeRedundant => SyncPolicy::TimeRedundant {
                sync_degree: self.sync_degree,
                lambda: self.lambda_s,
                max_retries: self.max_retries,
            },
            PolicyKind::ComponentRedundant => SyncPolicy::ComponentRedundant {
                min_cluster_size: self.min_cluster_size,
            },
            PolicyKind::Barrier => SyncPolicy::Barrier {},
            PolicyKind::TimeSlotted => SyncPolicy::TimeSlotted {
                slot_multiplier: self.slot_multiplier,
            },
        }
    }

    fn fog_count(&self) -> u32 {
        match self.controller_topology {
            TopologySpec::Single {} => 1,
            TopologySpec::Hierarchical { fog_count } => fog_count,
        }
    }

    /// Policy label as used in report rows and decision logs.
    pub fn policy_name(&self) -> &'static str {
        self.policy().label()
    }
}

/// Stream offsets for deterministic generation keyed off the base seed.
const GRAPH_STREAM: u64 = 0x6772;
const MOBILITY_STREAM: u64 = 0x6d6f;

/// Generates the experiment's task graphs; identical for every replication
/// and for every swept value, so paired comparisons share graphs.
pub fn build_graphs(cfg: &ExperimentConfig) -> Result<Vec<TaskGraph>, ExperimentError> {
    let tg = &cfg.task_graphs;
    if let Some(files) = &tg.files {
        let mut graphs = Vec::new();
        for f in files {
            let text = std::fs::read_to_string(f)?;
            graphs.push(crate::model::load_task_graph_json(&text)?);
        }
        if graphs.is_empty() {
            return Err(ExperimentError::Validation {
                field: "task_graphs.files".into(),
                reason: "at least one graph file required".into(),
            });
        }
        return Ok(graphs);
    }
    let mut graphs = Vec::with_capacity(tg.count as usize);
    let width = (tg.total_tasks.max(2) as f64).log10().ceil() as usize + 1;
    for g in 0..tg.count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(GRAPH_STREAM.wrapping_add(g as u64));
        let total = tg.total_tasks;
        // Graphs differ in how many sync points they carry, spread around
        // the configured fraction.
        let target = (tg.sync_fraction * total as f64).round();
        let sync_count = if tg.count > 1 {
            let scale = 0.5 + g as f64 / (tg.count - 1) as f64;
            (target * scale).round().clamp(0.0, total as f64) as u32
        } else {
            target as u32
        }
        .max(if tg.sync_fraction > 0.0 { 1 } else { 0 });
        let mut sync_positions: Vec<u32> = (1..=sync_count)
            .map(|k| (k * total) / (sync_count + 1))
            .collect();
        sync_positions.dedup();
        let mut tasks = Vec::with_capacity(total as usize);
        for i in 0..total {
            let id = TaskId::new(format!("t{i:0width$}"));
            let kind = if sync_positions.contains(&i) {
                TaskKind::ControllerToWorkerSync
            } else if rng.random_range(0.0..1.0) < 0.5 {
                TaskKind::ControllerToWorkerAsync
            } else {
                TaskKind::LocalWorker
            };
            let base = if tg.duration_min_s >= tg.duration_max_s {
                tg.duration_min_s
            } else {
                rng.random_range(tg.duration_min_s.ln()..tg.duration_max_s.ln()).exp()
            };
            let stddev = base * tg.duration_stddev_frac;
            let mut preds = Vec::new();
            if i > 0 {
                preds.push(TaskId::new(format!("t{:0width$}", i - 1)));
                // Occasional extra edge for diamond shapes.
                if i > 1 && rng.random_range(0.0..1.0) < 0.2 {
                    let extra = rng.random_range(0..i - 1);
                    preds.push(TaskId::new(format!("t{extra:0width$}")));
                }
            }
            tasks.push(TaskSpec::new(id, kind, base, stddev, preds));
        }
        let graph = TaskGraph::new(format!("g{g}"), tasks);
        validate_task_graph(&graph).expect("generated graphs are valid by construction");
        graphs.push(graph);
    }
    Ok(graphs)
}

fn build_mobility(cfg: &ExperimentConfig) -> Result<Option<(PositionGrid, f64)>, ExperimentError> {
    match &cfg.mobility {
        MobilitySpec::None {} => Ok(None),
        MobilitySpec::RandomWaypoint { node_count, duration_s, speed_mps, box_m, resample_interval_s } => {
            let samples = synth_mobility(
                *node_count,
                *duration_s,
                *resample_interval_s,
                *speed_mps,
                *box_m,
                cfg.seed.wrapping_add(MOBILITY_STREAM),
            );
            Ok(Some((resample(&samples, *resample_interval_s), *resample_interval_s)))
        }
        MobilitySpec::TraceCsv { path, resample_interval_s } => {
            let text = std::fs::read_to_string(path)?;
            let samples = parse_mobility_csv(&text)?;
            Ok(Some((resample(&samples, *resample_interval_s), *resample_interval_s)))
        }
    }
}

fn world_config(cfg: &ExperimentConfig) -> Result<WorldConfig, ExperimentError> {
    let graphs = build_graphs(cfg)?;
    let mobility = build_mobility(cfg)?;
    let (mobility, mobility_interval_s) = match mobility {
        Some((grid, interval)) => (Some(grid), interval),
        None => (None, defaults::RESAMPLE_INTERVAL_S),
    };
    Ok(WorldConfig {
        params: SimParams {
            controller_worker_delay: cfg.controller_worker_delay_s,
            status_update_cost: cfg.status_update_cost_s,
            fail_probability: cfg.fail_probability,
            join_probability: cfg.join_probability,
            prediction_accuracy: cfg.prediction_accuracy,
            max_events: cfg.max_events,
        },
        policy: cfg.policy(),
        update_scheme: cfg.update_scheme,
        worker_count: cfg.worker_count,
        cluster_count: cfg.cluster_count,
        min_cluster_size: cfg.min_cluster_size,
        slot_sync_degree: cfg.sync_degree,
        fog_count: cfg.fog_count(),
        runs: cfg.runs_per_replication,
        graphs,
        local_queue_depth: cfg.task_graphs.local_queue_depth,
        local_task_min_s: cfg.task_graphs.local_task_min_s,
        local_task_max_s: cfg.task_graphs.local_task_max_s,
        barrier_timeout: cfg.barrier_timeout_s,
        mobility,
        mobility_interval_s,
    })
}

/// Everything a single-configuration experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub row: ReportRow,
    pub aggregate: AggregateReport,
    /// One outcome per replication, in replication order.
    pub replications: Vec<RunOutcome>,
}

impl ExperimentOutput {
    /// The quorum decision log as JSON lines, replication-major order.
    pub fn decisions_jsonl(&self) -> String {
        let mut out = String::new();
        for rep in &self.replications {
            for d in &rep.decisions {
                out.push_str(&serde_json::to_string(d).expect("serializable"));
                out.push('\n');
            }
        }
        out
    }
}

/// Runs all replications of one configuration. `jobs` caps the worker
/// threads; the output is identical for any value.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let base = world_config(cfg)?;
    let seeds: Vec<u64> = (0..cfg.replications)
        .map(|r| crate::rng::replication_seed(cfg.seed, r))
        .collect();
    let run_one = |seed: &u64| -> Result<RunOutcome, ExperimentError> {
        let mut world = World::new(base.clone(), *seed)?;
        world.run_until_idle()?;
        Ok(world.into_outcome())
    };
    let replications: Vec<RunOutcome> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| {
            use rayon::prelude::*;
            seeds.par_iter().map(run_one).collect::<Result<Vec<_>, _>>()
        })?
    } else {
        seeds.iter().map(run_one).collect::<Result<Vec<_>, _>>()?
    };
    let mut records = Vec::new();
    let mut times: Vec<Vec<f64>> = Vec::new();
    for rep in &replications {
        records.extend(rep.records.iter().cloned());
        times.push(rep.sync_completion_times.clone());
    }
    let agg = aggregate(&records, &times)?;
    let row = ReportRow {
        policy: cfg.policy_name().to_string(),
        update_scheme: cfg.update_scheme.label().to_string(),
        workers: cfg.worker_count,
        clusters: cfg.cluster_count,
        min_cluster_size: cfg.min_cluster_size,
        sync_degree: cfg.sync_degree,
        lambda_s: cfg.lambda_s,
        retries: cfg.max_retries,
        accuracy: cfg.prediction_accuracy,
        seed: cfg.seed,
        aggregate: agg.clone(),
    };
    Ok(ExperimentOutput { row, aggregate: agg, replications })
}

/// Applies a swept value to a copy of the base config.
pub fn apply_parameter(
    cfg: &ExperimentConfig,
    param: &str,
    value: f64,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut c = cfg.clone();
    match param {
        "worker_count" | "workers" => c.worker_count = value as u32,
        "cluster_count" | "clusters" => c.cluster_count = value as u32,
        "min_cluster_size" => c.min_cluster_size = value as u32,
        "sync_degree" => c.sync_degree = value,
        "lambda_s" => c.lambda_s = value,
        "max_retries" | "retries" => c.max_retries = value as u32,
        "slot_multiplier" => c.slot_multiplier = value,
        "prediction_accuracy" | "accuracy" => c.prediction_accuracy = value,
        "fail_probability" => c.fail_probability = value,
        "join_probability" => c.join_probability = value,
        "controller_worker_delay_s" => c.controller_worker_delay_s = value,
        "status_update_cost_s" => c.status_update_cost_s = value,
        "runs_per_replication" => c.runs_per_replication = value as u32,
        "replications" => c.replications = value as u32,
        "total_tasks" => c.task_graphs.total_tasks = value as u32,
        "sync_fraction" => c.task_graphs.sync_fraction = value,
        "local_queue_depth" => c.task_graphs.local_queue_depth = value as u32,
        other => return Err(ExperimentError::UnknownParameter(other.to_string())),
    }
    c.validate()?;
    Ok(c)
}

/// Result of a parameter sweep: one row per value, seeds aligned across
/// values so comparisons are paired.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ReportRow>,
    pub outputs: Vec<(f64, ExperimentOutput)>,
}

pub fn sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[f64],
    jobs: usize,
) -> Result<SweepOutput, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Validation {
            field: "values".into(),
            reason: "sweep needs at least one value".into(),
        });
    }
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for v in values {
        let c = apply_parameter(cfg, param, *v)?;
        let out = run_experiment(&c, jobs)?;
        rows.push(out.row.clone());
        outputs.push((*v, out));
    }
    Ok(SweepOutput { rows, outputs })
}

/// Writes `report.csv`, `decisions.jsonl` and `meta.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    rows: &[ReportRow],
    decisions_jsonl: &str,
) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), export_csv(rows))?;
    std::fs::write(dir.join("decisions.jsonl"), decisions_jsonl)?;
    let meta = serde_json::json!({
        "config": cfg,
        "tool": "syncsim",
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut text = serde_json::to_string_pretty(&meta).expect("serializable");
    text.push('\n');
    std::fs::write(dir.join("meta.json"), text)?;
    Ok(())
}
