use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bfqr_core::dataset::{generate_synthetic, CsvSchema, SYNTHETIC_FEATURES};
use bfqr_core::harness::{emit_report, run_experiment, DatasetSpec, ObjectiveData};
use bfqr_core::{Error, ExperimentConfig, GeneratorOptions, Method, Result};
use clap::{Args, Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(
    name = "bfqr",
    version,
    about = "Binned fair quantile regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed sweep and print the aggregate table.
    Run(Box<RunArgs>),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Print the default configuration as TOML.
    Config {
        /// Desk-scale preset (n = 20,000, seeds 0..19).
        #[arg(long)]
        desk: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the full defaults.
    #[arg(long)]
    desk: bool,
    /// `synthetic` or a CSV path (needs --label, --group, --features or a
    /// schema in the config file).
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Synthetic sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Calibration label bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Comma-separated subset of CQR,GCQR,LCQR,BFQR,BFQR*.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Seed count `k` (seeds 0..k) or an explicit range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// `test` or `calibration`.
    #[arg(long)]
    optimize_on: Option<String>,
    #[arg(long)]
    t_repeats: Option<usize>,
    /// Output directory for report.txt, report.json and traces.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-seed optimizer traces.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    abs_multiplier: bool,
    /// Destination file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(*args),
        Command::Generate(args) => generate(args).map(|()| true),
        Command::Config { desk } => print_config(desk).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    let k: u64 = text.trim().parse().map_err(|_| bad())?;
    Ok((0..k).collect())
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if args.desk => ExperimentConfig::desk(),
        None => ExperimentConfig::default(),
    };
    match args.dataset.as_deref() {
        None => {}
        Some("synthetic") => {
            if !matches!(c.dataset, DatasetSpec::Synthetic { .. }) {
                c.dataset = ExperimentConfig::desk().dataset;
            }
        }
        Some(path) => {
            let schema = match (&args.label, &args.group, &args.features, &c.dataset) {
                (Some(label), Some(group), Some(features), _) => CsvSchema {
                    features: features.clone(),
                    label: label.clone(),
                    group: group.clone(),
                },
                (_, _, _, DatasetSpec::Csv { schema, .. }) => schema.clone(),
                _ => {
                    return Err(Error::Config(
                        "a CSV dataset needs --label, --group and --features".into(),
                    ))
                }
            };
            c.dataset = DatasetSpec::Csv {
                path: path.into(),
                schema,
            };
        }
    }
    if let Some(n) = args.n {
        match &mut c.dataset {
            DatasetSpec::Synthetic { n: size, .. } => *size = n,
            DatasetSpec::Csv { .. } => {
                return Err(Error::Config("--n applies to synthetic data only".into()))
            }
        }
    }
    if let Some(alpha) = args.alpha {
        c.alpha = alpha;
    }
    if let Some(bins) = args.bins {
        c.bins = bins;
    }
    if let Some(methods) = &args.methods {
        c.methods = methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_>>()?;
    }
    if let Some(seeds) = &args.seeds {
        c.seeds = parse_seeds(seeds)?;
    }
    if let Some(r) = args.max_iters {
        c.optimizer.max_iterations = r;
    }
    if let Some(eps) = args.epsilon {
        c.optimizer.epsilon = Some(eps);
    }
    if let Some(on) = &args.optimize_on {
        c.optimize_on = on.parse::<ObjectiveData>()?;
    }
    if let Some(r) = args.t_repeats {
        c.t.repeats = r;
    }
    if let Some(out) = &args.out {
        c.output.dir = Some(out.clone());
    }
    if args.traces {
        c.output.traces = true;
    }
    c.validate()?;
    Ok(c)
}

fn run(args: RunArgs) -> Result<bool> {
    let config = build_config(&args)?;
    let report = run_experiment(&config)?;
    print!("{}", report.table.to_text());
    if let Some(dir) = &config.output.dir {
        for path in emit_report(&report, dir, config.output.traces)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(report.succeeded())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let data = generate_synthetic(
        args.n,
        args.seed,
        GeneratorOptions {
            abs_multiplier: args.abs_multiplier,
        },
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..SYNTHETIC_FEATURES).map(|j| format!("x{j}")).collect();
    header.extend(["a".to_string(), "y".to_string()]);
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        row.push(data.groups()[i].to_string());
        row.push(format!("{:?}", data.labels()[i]));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    match args.out {
        Some(path) => fs::write(&path, bytes).map_err(|e| Error::Io { path, source: e }),
        None => std::io::stdout().write_all(&bytes).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn print_config(desk: bool) -> Result<()> {
    let c = if desk {
        ExperimentConfig::desk()
    } else {
        ExperimentConfig::default()
    };
    print!("{}", c.to_toml()?);
    Ok(())
}
