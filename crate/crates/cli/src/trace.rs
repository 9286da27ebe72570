//! Run artifacts: JSON-lines traces (one record per step) and the batch
//! metrics CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use riskplan_core::sim::{MetricsReport, PlanSummary, RunMetrics, SimEvent, StepRecord};
use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
struct TraceVehicle<'a> {
    name: &'a str,
    x: f64,
    y: f64,
    phi: f64,
    delta: f64,
    v: f64,
}

#[derive(Serialize)]
struct TraceRisk {
    ego: f64,
    /// Trajectory count per predicted agent.
    modes: Vec<usize>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step: u64,
    time: f64,
    vehicles: Vec<TraceVehicle<'a>>,
    plan: Option<&'a PlanSummary>,
    risk: TraceRisk,
    events: &'a [SimEvent],
}

/// Streaming JSON-lines writer; one line per simulation step.
pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))?;
        Ok(TraceWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn write_record(&mut self, record: &StepRecord) -> Result<(), CliError> {
        let rec = TraceRecord {
            step: record.step,
            time: record.time,
            vehicles: record
                .vehicles
                .iter()
                .map(|v| TraceVehicle {
                    name: &v.name,
                    x: v.state.x,
                    y: v.state.y,
                    phi: v.state.phi,
                    delta: v.state.delta,
                    v: v.state.v,
                })
                .collect(),
            plan: record.plan.as_ref(),
            risk: TraceRisk {
                ego: record.ego_risk,
                modes: record.predictions.iter().map(|p| p.len()).collect(),
            },
            events: &record.events,
        };
        serde_json::to_writer(&mut self.out, &rec)
            .map_err(|e| CliError::Runtime(format!("encoding trace record: {e}")))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| CliError::Runtime(format!("writing trace: {e}")))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out
            .flush()
            .map_err(|e| CliError::Runtime(format!("flushing trace: {e}")))
    }
}

/// Reads a trace back as JSON values (round-trip support for tests and
/// tooling).
pub fn read_trace(path: &Path) -> Result<Vec<serde_json::Value>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Runtime(format!("opening {}: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| CliError::Runtime(format!("reading trace: {e}")))?;
            serde_json::from_str(&line)
                .map_err(|e| CliError::Runtime(format!("parsing trace line: {e}")))
        })
        .collect()
}

const METRICS_HEADER: &str = "seed,scenario_time,avg_speed,collision,goal_reached,steps,trace_hash";

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{},{},{:016x}\n",
            r.seed,
            r.scenario_time,
            r.avg_speed,
            r.collision as u8,
            r.goal_reached as u8,
            r.steps,
            r.trace_hash
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunMetrics>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(CliError::Runtime(format!(
                "unexpected metrics header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(CliError::Runtime(format!("metrics row {i} malformed")));
        }
        let parse_err = |what: &str| CliError::Runtime(format!("metrics row {i}: bad {what}"));
        rows.push(RunMetrics {
            seed: f[0].parse().map_err(|_| parse_err("seed"))?,
            scenario_time: f[1].parse().map_err(|_| parse_err("scenario_time"))?,
            avg_speed: f[2].parse().map_err(|_| parse_err("avg_speed"))?,
            collision: f[3] == "1",
            goal_reached: f[4] == "1",
            steps: f[5].parse().map_err(|_| parse_err("steps"))?,
            trace_hash: u64::from_str_radix(f[6], 16).map_err(|_| parse_err("trace_hash"))?,
        });
    }
    Ok(rows)
}
