use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tightfit::dynamic::RateTrace;
use tightfit::pipeline::{self, Overrides, PipelineConfig};
use tightfit::Error;

/// Shrink a microservice deployment onto fewer servers without losing performance.
#[derive(Parser)]
#[command(version, args_conflicts_with_subcommands = true)]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Request-rate CSV (`timestamp_s,request_rate`) for the switching analysis.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Stop after resource clampdown.
    #[arg(long)]
    phase1_only: bool,
    /// Measure without noise.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeated trials per measurement.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Utilization threshold (percent) of the autoscaler comparison.
    #[arg(long)]
    baseline_threshold: Option<f64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Exhaustive search on a tiny instance.
    #[command(hide = true)]
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        servers: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleConstraint(_) => 3,
        Error::Invalid(_)
        | Error::Json(_)
        | Error::Toml(_)
        | Error::Csv(_)
        | Error::Trace { .. }
        | Error::Io(_)
        | Error::UnknownMr(_)
        | Error::MetricMismatch(..) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> tightfit::Result<()> {
    if let Some(Command::Oracle {
        config,
        levels,
        servers,
    }) = cli.command
    {
        let app = PipelineConfig::load(&config)?.load_inputs()?;
        let best = tightfit::oracle::brute_force_best(&app.model, &app.cluster, &app.workload, levels, servers)?;
        println!("{}", serde_json::to_string_pretty(&best)?);
        return Ok(());
    }

    let path = cli
        .config
        .ok_or_else(|| Error::Invalid("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(&path)?;
    Overrides {
        seed: cli.seed,
        trials: cli.trials,
        deterministic: cli.deterministic,
    }
    .apply(&mut cfg);
    if cli.baseline_threshold.is_some() {
        cfg.dynamic.baseline_threshold = cli.baseline_threshold;
    }
    cfg.validate()?;
    let app = cfg.load_inputs()?;
    // Read the trace before any work so a bad file fails fast.
    let trace = cli.trace.as_ref().map(RateTrace::from_csv_path).transpose()?;

    let run = pipeline::run_on(&cfg, &app, cli.phase1_only)?;
    let analysis = trace
        .as_ref()
        .map(|t| pipeline::run_trace_analysis(&cfg, &app, t))
        .transpose()?;

    pipeline::write_run(&run, &cli.out_dir)?;
    if let Some(a) = &analysis {
        pipeline::write_trace_analysis(a, &cli.out_dir)?;
    }
    for s in &run.report.stages {
        println!("{:<10} servers={:<3} {}={:.3}", s.stage, s.servers, run.report.metric, s.value);
    }
    println!("wrote {}", cli.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
