use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskplan_cli::{checkpoint, config, report, run_batch, trace, CliError, OutputOptions};
use riskplan_core::rng::Rng;
use riskplan_core::sim::PredictorChoice;
use riskplan_core::synthetic::{generate_dataset, SyntheticConfig};
use riskplan_core::trtp::{dataset_loss, train_toy, NetParams, DEFAULT_ALPHA, DEFAULT_BETA};

/// Risk-aware motion planning scenario runner.
#[derive(Parser)]
#[command(name = "riskplan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over a seed batch and write traces, metrics and
    /// optional SVG snapshots.
    Run(RunArgs),
    /// Train the toy prediction network on synthetic data and write a
    /// checkpoint plus the loss curve.
    TrainToy(TrainArgs),
    /// Summarize a metrics CSV (Time, Avg Spd, Col Rate).
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON document.
    #[arg(long)]
    config: PathBuf,
    /// Seed range `a..b` (end-exclusive) or a single seed; defaults to the
    /// scenario's seed for one run.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory for traces, metrics and snapshots.
    #[arg(long)]
    out: PathBuf,
    /// Emit an SVG snapshot every N steps (0 = off).
    #[arg(long, default_value_t = 0)]
    svg_every: usize,
    /// Dump the rasterized risk field every N steps (0 = off).
    #[arg(long, default_value_t = 0)]
    risk_grid_every: usize,
    /// Skip writing the JSON-lines traces.
    #[arg(long)]
    no_trace: bool,
    /// Skip writing the metrics CSV.
    #[arg(long)]
    no_metrics: bool,
    /// Override the scenario's predictor (csp | target_region | trtp_toy).
    #[arg(long)]
    predictor: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training JSON document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the checkpoint and loss curve.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV produced by `run`.
    #[arg(long)]
    metrics: PathBuf,
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = config::load_scenario(&args.config)?;
    if let Some(name) = &args.predictor {
        cfg.ego.predictor = match name.as_str() {
            "csp" => PredictorChoice::Csp,
            "target_region" => PredictorChoice::TargetRegion,
            "trtp_toy" => PredictorChoice::TrtpToy,
            other => return Err(CliError::Config(format!("unknown predictor {other}"))),
        };
        if cfg.ego.predictor == PredictorChoice::TrtpToy && cfg.trtp_params.is_none() {
            let rel = cfg.ego.checkpoint.clone().ok_or_else(|| {
                CliError::Config("predictor trtp_toy requires ego.checkpoint".into())
            })?;
            let path = riskplan_cli::sibling_path(&args.config, &rel);
            cfg.trtp_params = Some(checkpoint::load_checkpoint(&path)?);
        }
    }

    let seeds = match &args.seeds {
        Some(s) => riskplan_cli::parse_seed_range(s)?,
        None => cfg.seed..cfg.seed + 1,
    };

    let mut out = OutputOptions::new(args.out.clone());
    out.trace = !args.no_trace;
    out.metrics = !args.no_metrics;
    out.svg_every = args.svg_every;
    out.risk_grid_every = args.risk_grid_every;

    let report_data = run_batch(&cfg, seeds, &out)?;
    print!("{}", report::summarize(&report_data.rows));
    Ok(())
}

fn cmd_train_toy(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = config::load_train_config(&args.config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", args.out.display())))?;

    let synth = SyntheticConfig {
        horizon_steps: cfg.dims.horizon_steps,
        history_len: cfg.dims.history_len,
        ..SyntheticConfig::default()
    };
    let mut rng = Rng::new(cfg.seed);
    let train_set = generate_dataset(&mut rng, cfg.dataset_size, &synth);
    let holdout = generate_dataset(&mut rng, cfg.holdout_size.max(1), &synth);

    let params = NetParams::init(cfg.dims, &mut rng);
    let initial = dataset_loss(&params, &holdout, DEFAULT_ALPHA, DEFAULT_BETA)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let outcome = train_toy(&train_set, params, cfg.steps, cfg.learning_rate)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let trained = dataset_loss(&outcome.params, &holdout, DEFAULT_ALPHA, DEFAULT_BETA)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let ckpt = args.out.join("checkpoint.json");
    checkpoint::save_checkpoint(&ckpt, &outcome.params)?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{i},{l:.6}\n"));
    }
    std::fs::write(args.out.join("loss_curve.csv"), curve)
        .map_err(|e| CliError::Runtime(format!("writing loss curve: {e}")))?;

    println!(
        "holdout loss: {initial:.4} -> {trained:.4} over {} steps ({} train / {} holdout samples)",
        cfg.steps,
        train_set.len(),
        holdout.len()
    );
    if cfg.steps > 0 && !(trained < initial) {
        return Err(CliError::Runtime(format!(
            "training diverged: holdout loss {initial:.4} -> {trained:.4}"
        )));
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let rows = trace::read_metrics_csv(&args.metrics)?;
    print!("{}", report::summarize(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::TrainToy(args) => cmd_train_toy(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
