use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmlp::experiment::{self, ExperimentConfig, SuiteMode};
use dmlp::Error;

#[derive(Parser)]
#[command(name = "dmlp", version, about = "Consensus training of vertically partitioned MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized baseline and distributed training for every seed; writes report.json.
    Run(RunArgs),
    /// Centralized baseline only.
    Centralized(RunArgs),
    /// Distributed training only.
    Distributed(RunArgs),
    /// Distributed AUC across overlap ratios.
    SweepOverlap(SweepArgs),
    /// Per-round weight-norm gap between distributed nodes and the centralized model.
    Convergence(RunArgs),
    /// Parse and validate a config without training.
    ValidateConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set training.learning_rate=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated trial seeds, replacing `seeds` in the config.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory, created if absent.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Maximum number of trials trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel_trials: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Overlap ratios to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    grid: Vec<f64>,
    /// Also train the centralized baseline once per seed.
    #[arg(long)]
    with_centralized: bool,
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config, &args.overrides)?;
    if let Some(seeds) = &args.seed_list {
        if seeds.is_empty() {
            return Err(Error::Config("--seed-list: at least one seed is required".into()));
        }
        cfg.set_seeds(seeds.clone());
    }
    cfg.validate().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    Ok(cfg)
}

fn prepare_out(out: &Path) -> Result<(), Error> {
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("--out {}: {e}", out.display())))
}

fn run_suite(args: &RunArgs, mode: SuiteMode) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let ds = cfg.load_dataset()?;
    prepare_out(&args.out)?;
    let report = experiment::run_suite_to_dir(&cfg, &ds, mode, args.parallel_trials, &args.out)?;
    let fmt = |v: &Option<experiment::MeanSd>| match v {
        Some(m) => format!("{:.4} +/- {:.4}", m.mean, m.sd),
        None => "-".into(),
    };
    println!("{}: seeds {:?}", report.name, report.seeds);
    println!("  theta_centralized  {}", fmt(&report.theta_centralized));
    println!("  theta_distributed  {}", fmt(&report.theta_distributed));
    if let Some(ci) = report.ci {
        println!("  95% CI             [{:.4}, {:.4}]", ci.lower, ci.upper);
    }
    if let Some(c) = report.comparable {
        println!("  comparable         {c}");
    }
    println!("  iterations C / D   {} / {}", fmt(&report.iterations_centralized), fmt(&report.rounds_distributed));
    println!("wrote {}", args.out.join("report.json").display());
    Ok(())
}

fn run_convergence(args: &RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let ds = cfg.load_dataset()?;
    prepare_out(&args.out)?;
    let outcomes = match experiment::run_trials(&cfg, &ds, SuiteMode::Both, args.parallel_trials) {
        Ok(o) => o,
        Err((partial, e)) => {
            experiment::write_trial_artifacts(&args.out, &partial)?;
            return Err(e);
        }
    };
    experiment::write_trial_artifacts(&args.out, &outcomes)?;
    for o in &outcomes {
        if let Some(trace) = o.distributed.as_ref().map(|d| &d.convergence_trace) {
            if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                println!("seed {}: rounds {}  metric {first:.6} -> {last:.6}", o.seed, trace.len());
            }
        }
    }
    println!("wrote {}", args.out.join("convergence.csv").display());
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<(), Error> {
    let cfg = load_config(&args.run.config)?;
    if let Some(bad) = args.grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("--grid: overlap ratio {bad} must lie in [0, 1]")));
    }
    let ds = cfg.load_dataset()?;
    prepare_out(&args.run.out)?;
    let rows = experiment::run_overlap_sweep(&cfg, &ds, &args.grid, args.with_centralized)?;
    experiment::write_sweep(&args.run.out, &rows)?;
    for r in &rows {
        println!(
            "overlap {:.2}: theta_distributed {:.4} +/- {:.4}",
            r.overlap_ratio, r.theta_distributed.mean, r.theta_distributed.sd
        );
    }
    println!("wrote {}", args.run.out.join("overlap_sweep.csv").display());
    Ok(())
}

fn validate(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = load_config(args)?;
    println!("{}: ok ({} seeds, m = {})", args.config.display(), cfg.seeds.len(), cfg.network.m);
    Ok(())
}

fn verbosity(command: &Command) -> u8 {
    match command {
        Command::Run(a) | Command::Centralized(a) | Command::Distributed(a) | Command::Convergence(a) => a.config.verbose,
        Command::SweepOverlap(a) => a.run.config.verbose,
        Command::ValidateConfig(a) => a.verbose,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match verbosity(&cli.command) {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Run(a) => run_suite(a, SuiteMode::Both),
        Command::Centralized(a) => run_suite(a, SuiteMode::CentralizedOnly),
        Command::Distributed(a) => run_suite(a, SuiteMode::DistributedOnly),
        Command::SweepOverlap(a) => run_sweep(a),
        Command::Convergence(a) => run_convergence(a),
        Command::ValidateConfig(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
