//! `syncsim`: config-driven experiment runner for the fog synchronization
//! simulator.
//!
//! Exit codes: 0 success, 2 configuration error, 3 simulation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use syncsim_core::experiment::{
    run_experiment, sweep, write_outputs, ExperimentConfig, ExperimentError,
};
use syncsim_core::trace::{
    emit_duration_csv, emit_mobility_csv, parse_duration_csv, parse_mobility_csv, resample,
    MobilitySample,
};

#[derive(Parser)]
#[command(name = "syncsim", version, about = "Fog-controller multi-point synchronization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run(RunArgs),
    /// Run one experiment per swept parameter value, seeds aligned.
    Sweep(SweepArgs),
    /// Trace utilities: resampling and canonical re-export.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (JSON); an empty file means all defaults.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.csv, decisions.jsonl and meta.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Maximum concurrent replications; output is independent of this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Config field to sweep, e.g. worker_count or prediction_accuracy.
    #[arg(long)]
    param: String,
    /// Comma-separated values for the swept field.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Resample a mobility trace onto the regular grid and emit it in
    /// canonical CSV form.
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Grid interval in seconds.
        #[arg(long, default_value_t = 30.0)]
        interval: f64,
    },
    /// Parse a trace and emit it back in canonical form.
    Export {
        /// Trace flavor: mobility (node_id,timestamp,x,y) or duration
        /// (task_label,duration_s).
        #[arg(long, value_parser = ["mobility", "duration"])]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SIM: u8 = 3;

fn exit_code_for(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Parse(_)
        | ExperimentError::UnknownKey(_)
        | ExperimentError::Validation { .. }
        | ExperimentError::UnknownParameter(_)
        | ExperimentError::Graph(_)
        | ExperimentError::Trace(_)
        | ExperimentError::Io(_) => EXIT_CONFIG,
        ExperimentError::Sim(_) | ExperimentError::Metrics(_) => EXIT_SIM,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace { command } => cmd_trace(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("syncsim: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, (u8, String)> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let cfg = load_config(&args.config, args.seed)?;
    let out = run_experiment(&cfg, args.jobs.max(1))
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    write_outputs(&args.out, &cfg, std::slice::from_ref(&out.row), &out.decisions_jsonl())
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let a = &out.aggregate;
    println!(
        "{} replications, {} runs, {} sync points: runtime/sync {:.3}s, quorum failures {:.2}%, incomplete {:.2}%",
        cfg.replications,
        a.total_runs,
        a.total_sync_points,
        a.runtime_per_sync_point_mean,
        a.pct_failed_quorum,
        a.pct_failed_incomplete,
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let cfg = load_config(&args.config, args.seed)?;
    let result = sweep(&cfg, &args.param, &args.values, args.jobs.max(1))
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let mut decisions = String::new();
    for (_, out) in &result.outputs {
        decisions.push_str(&out.decisions_jsonl());
    }
    write_outputs(&args.out, &cfg, &result.rows, &decisions)
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    for ((value, out), row) in result.outputs.iter().zip(&result.rows) {
        println!(
            "{}={value}: runtime/sync {:.3}s, quorum failures {:.2}%, ctrl msgs {}",
            args.param,
            row.aggregate.runtime_per_sync_point_mean,
            row.aggregate.pct_failed_quorum,
            out.aggregate.total_update_messages,
        );
    }
    Ok(())
}

fn cmd_trace(command: TraceCommand) -> CmdResult {
    let config_err = |msg: String| (EXIT_CONFIG, msg);
    match command {
        TraceCommand::Resample { input, output, interval } => {
            if interval <= 0.0 {
                return Err(config_err("resample interval must be > 0".into()));
            }
            let text = std::fs::read_to_string(&input)
                .map_err(|e| config_err(format!("{}: {e}", input.display())))?;
            let samples = parse_mobility_csv(&text).map_err(|e| config_err(e.to_string()))?;
            let grid = resample(&samples, interval);
            let mut resampled = Vec::new();
            for (node, track) in &grid.nodes {
                for (k, p) in track.iter().enumerate() {
                    resampled.push(MobilitySample {
                        node_id: *node,
                        timestamp: k as f64 * interval,
                        x: p.x,
                        y: p.y,
                    });
                }
            }
            std::fs::write(&output, emit_mobility_csv(&resampled))
                .map_err(|e| config_err(e.to_string()))?;
            println!("{} nodes, {} grid points", grid.nodes.len(), grid.points());
            Ok(())
        }
        TraceCommand::Export { kind, input, output } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| config_err(format!("{}: {e}", input.display())))?;
            let canonical = match kind.as_str() {
                "mobility" => emit_mobility_csv(
                    &parse_mobility_csv(&text).map_err(|e| config_err(e.to_string()))?,
                ),
                "duration" => emit_duration_csv(
                    &parse_duration_csv(&text).map_err(|e| config_err(e.to_string()))?,
                ),
                other => return Err(config_err(format!("unknown trace kind `{other}`"))),
            };
            std::fs::write(&output, canonical).map_err(|e| config_err(e.to_string()))?;
            Ok(())
        }
    }
}
