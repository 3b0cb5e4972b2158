//! Command-line driver: runs benchmark experiments, recomputes metrics,
//! filters features, summarizes and plots result directories.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad config, rejected
//! model/protocol pair), 2 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use forgetbench::data::{load_dataset_dir, resolve_data_path};
use forgetbench::error::Error;
use forgetbench::fcbf;
use forgetbench::harness::plots::{curve_csv, curve_svg, CurveKind};
use forgetbench::harness::{
    self, alpha_ideal_cached, build_stream, load_records, summarize, summary_csv,
    ExperimentConfig, ModelId, ModelOverrides, Protocol, RunRecord,
};

#[derive(Parser)]
#[command(
    name = "forgetbench",
    version,
    about = "Incremental-learning benchmark harness",
    long_about = "Trains forgetting-mitigation models through sequential study sessions and \
                  scores retention and acquisition. Dataset paths resolve against the \
                  FORGETBENCH_DATA environment variable when they do not exist locally."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or a matrix of models) and persist run records.
    Run(RunArgs),
    /// Train the offline reference model and cache its accuracy.
    Ideal(IdealArgs),
    /// Recompute the omega metrics stored in a run record.
    Metrics(MetricsArgs),
    /// Feature-redundancy analysis over a dataset's training split.
    Fcbf(FcbfArgs),
    /// Aggregate run records in a directory into a summary table.
    Summarize(SummarizeArgs),
    /// Render accuracy curves from run records as CSV + SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// permutation | incremental-class | multimodal
    #[arg(long)]
    protocol: String,
    /// Comma-separated list of: mlp, ewc, pathnet, geppnet, geppnet-stm, fel
    #[arg(long)]
    model: String,
    /// Dataset directory (IDX files or train.csv/test.csv)
    #[arg(long)]
    dataset: PathBuf,
    /// Second dataset directory (multimodal protocol)
    #[arg(long)]
    dataset2: Option<PathBuf>,
    /// Session count for the permutation protocol
    #[arg(long)]
    sessions: Option<usize>,
    /// Base-set class share for the incremental-class protocol
    #[arg(long)]
    base_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file; flags override the file, the file overrides defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for run records
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for a multi-model matrix
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct IdealArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "permutation")]
    protocol: String,
    #[arg(long)]
    dataset2: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run-record JSON file
    #[arg(long)]
    record: PathBuf,
}

#[derive(Args)]
struct FcbfArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Equal-width bins per feature
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Relevance threshold on SU(feature, class)
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the full pairwise SU matrix as CSV
    #[arg(long, default_value_t = false)]
    su_matrix: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory of run-record JSON files
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    dir: PathBuf,
    /// base | new | all
    #[arg(long)]
    figure: String,
    /// Only plot records of this protocol
    #[arg(long)]
    protocol: Option<String>,
}

/// JSON config file shape: every field optional, flags win over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    protocol: Option<String>,
    model: Option<String>,
    dataset: Option<String>,
    dataset2: Option<String>,
    sessions: Option<usize>,
    base_fraction: Option<f64>,
    seed: Option<u64>,
    alpha_ideal: Option<f64>,
    out: Option<String>,
    overrides: Option<ModelOverrides>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config file {}: {e}", p.display())))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) | Error::Format { .. } | Error::Data(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ideal(args) => cmd_ideal(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Fcbf(args) => cmd_fcbf(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn assemble_config(
    args: &RunArgs,
    file: &FileConfig,
    model: ModelId,
) -> Result<ExperimentConfig, Error> {
    let protocol_str = if args.protocol.is_empty() {
        file.protocol.clone().unwrap_or_default()
    } else {
        args.protocol.clone()
    };
    let protocol = Protocol::from_str(&protocol_str)?;
    let dataset = args.dataset.to_string_lossy().into_owned();
    let dataset2 = args
        .dataset2
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned())
        .or_else(|| file.dataset2.clone());
    Ok(ExperimentConfig {
        protocol,
        model,
        dataset,
        dataset2,
        sessions: args.sessions.or(file.sessions),
        base_fraction: args.base_fraction.or(file.base_fraction).unwrap_or(0.5),
        seed: args.seed.or(file.seed).unwrap_or(0),
        alpha_ideal: file.alpha_ideal,
        out_dir: args
            .out
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| "./results".into()),
        overrides: file.overrides.clone().unwrap_or_default(),
    })
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let file = load_file_config(&args.config)?;
    let model_list = if args.model.is_empty() {
        file.model.clone().unwrap_or_default()
    } else {
        args.model.clone()
    };
    let models: Vec<ModelId> = model_list
        .split(',')
        .map(|m| ModelId::from_str(m.trim()))
        .collect::<Result<_, _>>()?;
    if models.is_empty() {
        return Err(Error::Config("no model given".into()));
    }
    let configs: Vec<ExperimentConfig> = models
        .iter()
        .map(|&m| assemble_config(&args, &file, m))
        .collect::<Result<_, _>>()?;
    for c in &configs {
        c.validate()?;
    }

    let jobs = args.jobs.max(1).min(configs.len());
    if jobs == 1 {
        for config in &configs {
            let record = harness::run(config)?;
            report_run(&record);
        }
        return Ok(());
    }
    // fixed-size worker pool over the model matrix; each run is isolated
    let queue = std::sync::Mutex::new(configs.into_iter());
    let results: std::sync::Mutex<Vec<Result<RunRecord, Error>>> =
        std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let config = match queue.lock().unwrap().next() {
                    Some(c) => c,
                    None => break,
                };
                let outcome = harness::run(&config);
                results.lock().unwrap().push(outcome);
            });
        }
    });
    let mut failures = Vec::new();
    for outcome in results.into_inner().unwrap() {
        match outcome {
            Ok(record) => report_run(&record),
            Err(e) => failures.push(e),
        }
    }
    match failures.into_iter().next() {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

fn report_run(record: &RunRecord) {
    println!(
        "{} {} {} seed={} omega_base={:.3} omega_new={:.3} omega_all={:.3} -> {}",
        record.model.as_str(),
        record.protocol.as_str(),
        record.dataset,
        record.seed,
        record.omega_base,
        record.omega_new,
        record.omega_all,
        Path::new(&record.config.out_dir)
            .join(record.config.record_name(&record.dataset))
            .display()
    );
}

fn cmd_ideal(args: IdealArgs) -> Result<(), Error> {
    let file = load_file_config(&args.config)?;
    let config = ExperimentConfig {
        protocol: Protocol::from_str(&args.protocol)?,
        model: ModelId::Mlp,
        dataset: args.dataset.to_string_lossy().into_owned(),
        dataset2: args.dataset2.map(|p| p.to_string_lossy().into_owned()),
        sessions: Some(2),
        base_fraction: file.base_fraction.unwrap_or(0.5),
        seed: args.seed,
        alpha_ideal: None,
        out_dir: args
            .out
            .map(|p| p.to_string_lossy().into_owned())
            .or(file.out)
            .unwrap_or_else(|| "./results".into()),
        overrides: file.overrides.unwrap_or_default(),
    };
    let (sessions, dataset_name) = build_stream(&config)?;
    let alpha = alpha_ideal_cached(&config, &sessions, &dataset_name)?;
    println!(
        "alpha_ideal {} {} = {:.6}",
        dataset_name,
        config.protocol.as_str(),
        alpha
    );
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Error> {
    let record = RunRecord::load(&args.record)?;
    let metrics = record.metrics()?;
    println!(
        "omega_base={:.6} omega_new={:.6} omega_all={:.6}",
        metrics.omega_base, metrics.omega_new, metrics.omega_all
    );
    let drift = (metrics.omega_base - record.omega_base)
        .abs()
        .max((metrics.omega_new - record.omega_new).abs())
        .max((metrics.omega_all - record.omega_all).abs());
    if drift > 1e-9 {
        eprintln!(
            "warning: stored omegas differ from recomputation by {drift:e}; record may be stale"
        );
    }
    Ok(())
}

fn cmd_fcbf(args: FcbfArgs) -> Result<(), Error> {
    let (train, _) = load_dataset_dir(&resolve_data_path(&args.dataset))?;
    let selection = fcbf::fcbf_select(&train.features, &train.labels, args.delta, args.bins)?;
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("./results"));
    std::fs::create_dir_all(&out_dir)?;
    let summary = serde_json::json!({
        "dataset": train.name,
        "bins": args.bins,
        "delta": args.delta,
        "total_features": train.dim(),
        "kept_features": selection.kept.len(),
        "kept_percentage": 100.0 * selection.kept_fraction(),
        "kept_indices": selection.kept,
    });
    let path = out_dir.join(format!("fcbf_{}.json", train.name));
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{}: kept {} of {} features ({:.1}%) -> {}",
        train.name,
        selection.kept.len(),
        train.dim(),
        100.0 * selection.kept_fraction(),
        path.display()
    );
    if args.su_matrix {
        let matrix = fcbf::su_matrix(&train.features, args.bins)?;
        let su_path = out_dir.join(format!("su_{}.csv", train.name));
        std::fs::write(&su_path, matrix.to_csv())?;
        println!("SU matrix -> {}", su_path.display());
    }
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), Error> {
    let records = load_records(&args.dir)?;
    let summary = summarize(&records)?;
    let csv = summary_csv(&summary, &records);
    print!("{csv}");
    let path = args.dir.join("summary.csv");
    std::fs::write(&path, csv)?;
    eprintln!("summary -> {}", path.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), Error> {
    let kind = CurveKind::from_str(&args.figure)?;
    let mut records = load_records(&args.dir)?;
    if let Some(p) = &args.protocol {
        let protocol = Protocol::from_str(p)?;
        records.retain(|r| r.protocol == protocol);
    }
    if records.is_empty() {
        return Err(Error::Input("no run records found".into()));
    }
    let protocol = records[0].protocol.as_str();
    let csv_path = args
        .dir
        .join(format!("curve_{}_{}.csv", protocol, kind.as_str()));
    std::fs::write(&csv_path, curve_csv(&records, kind)?)?;
    let svg_path = args
        .dir
        .join(format!("curve_{}_{}.svg", protocol, kind.as_str()));
    std::fs::write(&svg_path, curve_svg(&records, kind)?)?;
    println!("{}", csv_path.display());
    println!("{}", svg_path.display());
    Ok(())
}
