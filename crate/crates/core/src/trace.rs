//! Task-duration and mobility traces: parsing, resampling onto a regular
//! grid, proximity clustering, and the synthetic generators that stand in
//! for proprietary datasets.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ClusterId, Position, WorkerId};

/// One raw mobility observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilitySample {
    pub node_id: u32,
    /// Seconds since the trace epoch.
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
}

/// A bag of positive task durations.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationTrace {
    pub entries: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing or wrong header, expected `{expected}`")]
    Header { expected: String },
}

const MOBILITY_HEADER: &str = "node_id,timestamp,x,y";
const DURATION_HEADER: &str = "task_label,duration_s";

/// Parses a mobility CSV (`node_id,timestamp,x,y`, header required).
/// Malformed rows are rejected with their line number.
pub fn parse_mobility_csv(input: &str) -> Result<Vec<MobilitySample>, ParseError> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == MOBILITY_HEADER => {}
        _ => {
            return Err(ParseError::Header {
                expected: MOBILITY_HEADER.to_string(),
            })
        }
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(ParseError::Malformed {
                line: line_no,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, name: &str| -> Result<f64, ParseError> {
            s.trim().parse::<f64>().map_err(|_| ParseError::Malformed {
                line: line_no,
                reason: format!("field {name} is not a number: `{s}`"),
            })
        };
        let node_id = fields[0]
            .trim()
            .parse::<u32>()
            .map_err(|_| ParseError::Malformed {
                line: line_no,
                reason: format!("field node_id is not an integer: `{}`", fields[0]),
            })?;
        samples.push(MobilitySample {
            node_id,
            timestamp: parse_f64(fields[1], "timestamp")?,
            x: parse_f64(fields[2], "x")?,
            y: parse_f64(fields[3], "y")?,
        });
    }
    Ok(samples)
}

/// Emits mobility samples in canonical CSV form (LF endings, shortest float
/// representation). `emit(parse(x))` is byte-identical for canonical inputs.
pub fn emit_mobility_csv(samples: &[MobilitySample]) -> String {
    let mut out = String::from(MOBILITY_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{},{},{},{}\n", s.node_id, s.timestamp, s.x, s.y));
    }
    out
}

/// Parses a duration CSV (`task_label,duration_s`).
pub fn parse_duration_csv(input: &str) -> Result<DurationTrace, ParseError> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == DURATION_HEADER => {}
        _ => {
            return Err(ParseError::Header {
                expected: DURATION_HEADER.to_string(),
            })
        }
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (label, dur) = line.split_once(',').ok_or_else(|| ParseError::Malformed {
            line: line_no,
            reason: "expected 2 fields".to_string(),
        })?;
        let duration: f64 = dur.trim().parse().map_err(|_| ParseError::Malformed {
            line: line_no,
            reason: format!("duration is not a number: `{dur}`"),
        })?;
        if !(duration > 0.0) {
            return Err(ParseError::Malformed {
                line: line_no,
                reason: format!("duration must be > 0, got {duration}"),
            });
        }
        entries.push((label.trim().to_string(), duration));
    }
    Ok(DurationTrace { entries })
}

pub fn emit_duration_csv(trace: &DurationTrace) -> String {
    let mut out = String::from(DURATION_HEADER);
    out.push('\n');
    for (label, d) in &trace.entries {
        out.push_str(&format!("{label},{d}\n"));
    }
    out
}

/// Positions of every node at every grid time. Grid times are
/// `k * interval` for `k = 0 ..= floor(max_timestamp / interval)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    pub interval: f64,
    /// Grid positions per node, one entry per grid point.
    pub nodes: BTreeMap<u32, Vec<Position>>,
}

impl PositionGrid {
    pub fn points(&self) -> usize {
        self.nodes.values().next().map_or(0, Vec::len)
    }

    /// Position of `node` at grid index `k`, clamped to the last point.
    pub fn at(&self, node: u32, k: usize) -> Option<Position> {
        let track = self.nodes.get(&node)?;
        track.get(k.min(track.len().saturating_sub(1))).copied()
    }
}

/// Resamples raw per-node observations onto the regular grid by linear
/// interpolation, holding the position constant outside the observed span.
pub fn resample(samples: &[MobilitySample], interval: f64) -> PositionGrid {
    assert!(interval > 0.0, "resample interval must be > 0");
    let mut per_node: BTreeMap<u32, Vec<&MobilitySample>> = BTreeMap::new();
    let mut max_ts: f64 = 0.0;
    for s in samples {
        per_node.entry(s.node_id).or_default().push(s);
        max_ts = max_ts.max(s.timestamp);
    }
    let points = (max_ts / interval).floor() as usize + 1;
    let mut nodes = BTreeMap::new();
    for (node, mut raw) in per_node {
        raw.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut track = Vec::with_capacity(points);
        for k in 0..points {
            let t = k as f64 * interval;
            track.push(position_at(&raw, t));
        }
        nodes.insert(node, track);
    }
    PositionGrid { interval, nodes }
}

fn position_at(sorted: &[&MobilitySample], t: f64) -> Position {
    let first = sorted.first().expect("node has at least one sample");
    if t <= first.timestamp {
        return Position { x: first.x, y: first.y };
    }
    let last = sorted.last().expect("node has at least one sample");
    if t >= last.timestamp {
        return Position { x: last.x, y: last.y };
    }
    // Two bracketing samples exist; interpolate linearly between them.
    let hi = sorted.partition_point(|s| s.timestamp < t);
    let (a, b) = (sorted[hi - 1], sorted[hi]);
    let span = b.timestamp - a.timestamp;
    if span <= 0.0 {
        return Position { x: b.x, y: b.y };
    }
    let f = (t - a.timestamp) / span;
    Position {
        x: a.x + f * (b.x - a.x),
        y: a.y + f * (b.y - a.y),
    }
}

/// Grid-partition clustering: the bounding box of the given positions is cut
/// into exactly `cluster_count` cells; a cell with at least
/// `min_cluster_size` workers forms a cluster, all other workers stay
/// unclustered for the interval.
pub fn assign_clusters(
    positions: &BTreeMap<WorkerId, Position>,
    cluster_count: u32,
    min_cluster_size: u32,
) -> BTreeMap<WorkerId, Option<ClusterId>> {
    assert!(cluster_count >= 1);
    if positions.is_empty() {
        return BTreeMap::new();
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in positions.values() {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    // Exact factorization into rows x cols = cluster_count keeps the cell
    // count equal to the requested cluster count.
    let rows = {
        let mut r = (cluster_count as f64).sqrt().floor() as u32;
        while r > 1 && cluster_count % r != 0 {
            r -= 1;
        }
        r.max(1)
    };
    let cols = cluster_count / rows;
    let width = max_x - min_x;
    let height = max_y - min_y;
    let cell_of = |p: &Position| -> u32 {
        let cx = if width > 0.0 {
            (((p.x - min_x) / width) * cols as f64).floor().min(cols as f64 - 1.0) as u32
        } else {
            0
        };
        let cy = if height > 0.0 {
            (((p.y - min_y) / height) * rows as f64).floor().min(rows as f64 - 1.0) as u32
        } else {
            0
        };
        cy * cols + cx
    };
    let mut occupancy: BTreeMap<u32, Vec<WorkerId>> = BTreeMap::new();
    for (w, p) in positions {
        occupancy.entry(cell_of(p)).or_default().push(*w);
    }
    let mut assignment = BTreeMap::new();
    for (cell, members) in occupancy {
        let cluster = if members.len() >= min_cluster_size as usize {
            Some(ClusterId(cell))
        } else {
            None
        };
        for w in members {
            assignment.insert(w, cluster);
        }
    }
    assignment
}

/// Log-uniform synthetic task durations in `[min_s, max_s]`; the substitute
/// for the proprietary task dataset.
pub fn synth_duration_trace(count: usize, min_s: f64, max_s: f64, seed: u64) -> DurationTrace {
    assert!(min_s > 0.0 && min_s <= max_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (min_s.ln(), max_s.ln());
    let entries = (0..count)
        .map(|i| {
            let d = if lo == hi {
                min_s
            } else {
                rng.random_range(lo..hi).exp()
            };
            (format!("task_{i:04}"), d)
        })
        .collect();
    DurationTrace { entries }
}

/// Random-waypoint walks inside a square box, emitted on the resample grid;
/// the substitute for the taxi mobility report.
pub fn synth_mobility(
    node_count: u32,
    duration_s: f64,
    interval_s: f64,
    speed_mps: f64,
    box_m: f64,
    seed: u64,
) -> Vec<MobilitySample> {
    assert!(node_count > 0 && duration_s > 0.0 && interval_s > 0.0 && box_m > 0.0);
    assert!(speed_mps >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for node in 0..node_count {
        let mut pos = Position {
            x: rng.random_range(0.0..box_m),
            y: rng.random_range(0.0..box_m),
        };
        let mut target = Position {
            x: rng.random_range(0.0..box_m),
            y: rng.random_range(0.0..box_m),
        };
        let mut t = 0.0;
        while t < duration_s {
            samples.push(MobilitySample {
                node_id: node,
                timestamp: t,
                x: pos.x,
                y: pos.y,
            });
            // Move toward the waypoint; pick a fresh one on arrival.
            let mut budget = speed_mps * interval_s;
            while budget > 0.0 {
                let dx = target.x - pos.x;
                let dy = target.y - pos.y;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist <= budget {
                    pos = target;
                    budget -= dist;
                    target = Position {
                        x: rng.random_range(0.0..box_m),
                        y: rng.random_range(0.0..box_m),
                    };
                    if speed_mps == 0.0 {
                        break;
                    }
                } else {
                    pos.x += dx / dist * budget;
                    pos.y += dy / dist * budget;
                    budget = 0.0;
                }
            }
            t += interval_s;
        }
    }
    samples.sort_by(|a, b| {
        a.node_id
            .cmp(&b.node_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    samples
}
