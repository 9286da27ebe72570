//! Command-line companion for the riskplan stack: scenario loading, batch
//! execution, JSON-lines traces, metrics CSV, SVG snapshots, toy-network
//! training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod svg;
pub mod trace;

use std::fs;
use std::path::{Path, PathBuf};

use riskplan_core::sim::{MetricsReport, RunMetrics, ScenarioConfig, Simulation};

/// CLI-level errors; the variant picks the process exit code
/// (config errors exit 1, runtime failures exit 2).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Artifact toggles for a batch run.
#[derive(Clone, Debug)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub trace: bool,
    pub metrics: bool,
    /// Emit an SVG snapshot every N steps (0 disables).
    pub svg_every: usize,
    /// Dump the rasterized risk field every N steps (0 disables).
    pub risk_grid_every: usize,
}

impl OutputOptions {
    pub fn new(dir: PathBuf) -> Self {
        OutputOptions {
            dir,
            trace: true,
            metrics: true,
            svg_every: 0,
            risk_grid_every: 0,
        }
    }
}

/// Runs the scenario over `seeds`, writing per-seed artifacts, and returns
/// the aggregated metrics. Files created before a failure are removed.
pub fn run_batch(
    cfg: &ScenarioConfig,
    seeds: std::ops::Range<u64>,
    out: &OutputOptions,
) -> Result<MetricsReport, CliError> {
    fs::create_dir_all(&out.dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out.dir.display())))?;

    let mut created: Vec<PathBuf> = Vec::new();
    let result = run_batch_inner(cfg, seeds, out, &mut created);
    if result.is_err() {
        for f in created {
            let _ = fs::remove_file(f);
        }
    }
    result
}

fn run_batch_inner(
    cfg: &ScenarioConfig,
    seeds: std::ops::Range<u64>,
    out: &OutputOptions,
    created: &mut Vec<PathBuf>,
) -> Result<MetricsReport, CliError> {
    let mut rows: Vec<RunMetrics> = Vec::new();
    for seed in seeds {
        let mut sim = Simulation::new(cfg, seed).map_err(|e| CliError::Config(e.to_string()))?;

        let mut tracer = if out.trace {
            let path = out.dir.join(format!("trace_seed{seed}.jsonl"));
            created.push(path.clone());
            Some(trace::TraceWriter::create(&path)?)
        } else {
            None
        };

        let step_cap = (cfg.max_duration / riskplan_core::sim::SIM_DT) as u64 + 10;
        while sim.finished().is_none() && sim.state().time < cfg.max_duration + 1.0 {
            let record = sim.step_closed_loop();
            if let Some(t) = tracer.as_mut() {
                t.write_record(&record)?;
            }
            if out.svg_every > 0 && record.step % out.svg_every as u64 == 0 {
                let path = out
                    .dir
                    .join(format!("seed{seed}_step{:05}.svg", record.step));
                let doc = svg::render_scene(&cfg.map, &record, &cfg.risk, cfg.prediction.dt_pred);
                fs::write(&path, doc)
                    .map_err(|e| CliError::Runtime(format!("writing svg: {e}")))?;
                created.push(path);
            }
            if out.risk_grid_every > 0 && record.step % out.risk_grid_every as u64 == 0 {
                // One grid file per sampled planner stage.
                let stages = cfg.planner.horizon + 1;
                for stage in (0..stages).step_by((stages / 4).max(1)) {
                    let path = out.dir.join(format!(
                        "risk_seed{seed}_step{:05}_stage{stage:03}.csv",
                        record.step
                    ));
                    let doc = svg::risk_grid_csv(
                        &record,
                        &cfg.risk,
                        cfg.prediction.dt_pred,
                        stage,
                        stages,
                    );
                    fs::write(&path, doc)
                        .map_err(|e| CliError::Runtime(format!("writing risk grid: {e}")))?;
                    created.push(path);
                }
            }
            if record.step > step_cap {
                break;
            }
        }
        if let Some(t) = tracer {
            t.finish()?;
        }
        rows.push(sim.run_to_end(seed));
    }

    let report = MetricsReport::from_rows(rows);
    if out.metrics {
        let path = out.dir.join("metrics.csv");
        trace::write_metrics_csv(&path, &report)?;
        created.push(path);
    }
    Ok(report)
}

/// Parses a seed range argument: either `a..b` (end-exclusive) or a single
/// seed `n`.
pub fn parse_seed_range(arg: &str) -> Result<std::ops::Range<u64>, CliError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("bad seed value: {s}")))
    };
    if let Some((a, b)) = arg.split_once("..") {
        let (a, b) = (parse(a)?, parse(b)?);
        if a >= b {
            return Err(CliError::Config(format!("empty seed range: {arg}")));
        }
        Ok(a..b)
    } else {
        let a = parse(arg)?;
        Ok(a..a + 1)
    }
}

/// Resolves a path relative to a config file's directory.
pub fn sibling_path(config_path: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
