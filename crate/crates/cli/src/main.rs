//! Command-line front end for empty-class experiments.
//!
//! Exit codes: 0 success, 2 config error, 3 data/format error, 4 acceptance
//! threshold failure (with `--check`), 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emptyclasses::config::{parse_config, ExperimentConfig};
use emptyclasses::error::Error;
use emptyclasses::pipeline::MetricsReport;
use emptyclasses::runner::{
    check_acceptance, run_baseline, run_experiment, run_single_stage, Stage,
};

#[derive(Parser)]
#[command(
    name = "emptyclasses",
    version,
    about = "Class-incremental learning with empty classes: train, detect OoD, build distances, extend and fine-tune, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Stop after this stage: train, detect, distances, extend or evaluate.
    #[arg(long = "stage", value_name = "name")]
    stage_name: Option<String>,
    /// Check the metrics against the config's [acceptance] thresholds and
    /// exit with code 4 on failure.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Config files, one experiment each (repeatable).
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Comma-separated seeds; each config runs once per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Root output directory; runs go to <out>/<name>-seed<seed>/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Stage I: train the initial model with entropy maximization.
    Train(StageArgs),
    /// Stage II: flag OoD samples in the test data by entropy thresholding.
    Detect(StageArgs),
    /// Stage III: build the pairwise distance matrix over detected samples.
    Distances(StageArgs),
    /// Stage IV: extend by k empty classes and fine-tune with frozen encoder.
    Extend(StageArgs),
    /// Evaluate the extended model (known/novel accuracy, confusion, scatter).
    Evaluate(StageArgs),
    /// k-means pseudo-labeling baseline over the same detected OoD set.
    Baseline(StageArgs),
    /// All stages in order, optionally stopping early.
    Run(RunArgs),
    /// Multiple experiments, each into its own output subdirectory.
    Sweep(SweepArgs),
}

fn load_config(args: &StageArgs) -> Result<ExperimentConfig, Error> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Format { .. } | Error::Io { .. } | Error::Consistency(_) => 3,
        _ => 1,
    }
}

fn print_summary(report: &MetricsReport) {
    println!(
        "acc_known={:.4} acc_novel={:.4} novel_assignment_rate={:.4} cluster_purity={:.4}",
        report.acc_known, report.acc_novel, report.novel_assignment_rate, report.cluster_purity
    );
    if let Some(d) = &report.detection {
        println!(
            "detection: recall={:.4} fpr={:.4} detected={}",
            d.recall, d.false_positive_rate, d.detected
        );
    }
}

fn check_thresholds(config: &ExperimentConfig, report: &MetricsReport) -> Result<(), u8> {
    let Some(thresholds) = &config.acceptance else {
        eprintln!("error: --check requires an [acceptance] section in the config");
        return Err(2);
    };
    let failures = check_acceptance(report, thresholds);
    if failures.is_empty() {
        println!("acceptance: all thresholds satisfied");
        Ok(())
    } else {
        for f in &failures {
            eprintln!(
                "acceptance failure: {} (bound {}, observed {:.6})",
                f.name, f.bound, f.observed
            );
        }
        Err(4)
    }
}

fn single_stage(args: &StageArgs, stage: Stage) -> Result<(), u8> {
    let config = load_config(args).map_err(|e| fail(&e))?;
    let report = run_single_stage(&config, &args.out, stage).map_err(|e| fail(&e))?;
    if let Some(report) = report {
        print_summary(&report);
    }
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn fail(err: &Error) -> u8 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

fn run(args: &RunArgs) -> Result<(), u8> {
    let config = load_config(&args.stage).map_err(|e| fail(&e))?;
    let stop_after = match &args.stage_name {
        Some(name) => Stage::parse(name).map_err(|e| fail(&e))?,
        None => Stage::Evaluate,
    };
    let report = run_experiment(&config, &args.stage.out, stop_after).map_err(|e| fail(&e))?;
    match report {
        Some(report) => {
            print_summary(&report);
            println!("artifacts written to {}", args.stage.out.display());
            if args.check {
                check_thresholds(&config, &report)?;
            }
        }
        None => {
            println!(
                "stopped after stage {:?}; artifacts written to {}",
                stop_after,
                args.stage.out.display()
            );
            if args.check {
                eprintln!("error: --check needs the evaluate stage to run");
                return Err(2);
            }
        }
    }
    Ok(())
}

fn baseline(args: &StageArgs) -> Result<(), u8> {
    let config = load_config(args).map_err(|e| fail(&e))?;
    let report = run_baseline(&config, &args.out).map_err(|e| fail(&e))?;
    print_summary(&report);
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), u8> {
    let seeds: &[Option<u64>] = if args.seeds.is_empty() {
        &[None]
    } else {
        &args.seeds.iter().copied().map(Some).collect::<Vec<_>>()
    };
    for config_path in &args.configs {
        for seed in seeds {
            let mut config = parse_config(config_path).map_err(|e| fail(&e))?;
            if let Some(seed) = seed {
                config.seed = *seed;
            }
            let stem = config_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "experiment".into());
            let dir = args.out.join(format!("{stem}-seed{}", config.seed));
            println!("== {} (seed {}) -> {}", stem, config.seed, dir.display());
            let report =
                run_experiment(&config, Path::new(&dir), Stage::Evaluate).map_err(|e| fail(&e))?;
            if let Some(report) = report {
                print_summary(&report);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => single_stage(args, Stage::Train),
        Command::Detect(args) => single_stage(args, Stage::Detect),
        Command::Distances(args) => single_stage(args, Stage::Distances),
        Command::Extend(args) => single_stage(args, Stage::Extend),
        Command::Evaluate(args) => single_stage(args, Stage::Evaluate),
        Command::Baseline(args) => baseline(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
