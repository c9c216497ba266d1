//! `gnnlab`: fetch TU datasets, run k-fold experiments, sweep epoch
//! budgets and plot training traces.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on a usage or
//! configuration error.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gnnlab::diagnostics::{emit_csv, render_svg, Series};
use gnnlab::graphdata::{fetch_tu, parse_tu_with, stratify, FeaturePolicy, ParseOptions};
use gnnlab::init::InitKind;
use gnnlab::models::ModelKind;
use gnnlab::training::{run_cv, FoldOptions, RunOptions, RunOutput};
use gnnlab::Dataset64;
use log::info;

use config::{DatasetConfig, ExperimentConfig};

const CACHE_ENV: &str = "GNNLAB_CACHE";
const DEFAULT_CACHE: &str = "data";

#[derive(Debug, Parser)]
#[command(
    name = "gnnlab",
    version,
    about = "Graph classification experiments with GCN, top-k pooling and ReInit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download a TU dataset into the cache and print its directory.
    Fetch {
        name: String,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value = gnnlab::graphdata::DEFAULT_URL_BASE)]
        url_base: String,
    },
    /// Run k-fold cross-validation and write report.json and traces.
    Train(TrainArgs),
    /// Evaluate accuracy after several epoch budgets for one or more configs.
    SweepEpochs(SweepArgs),
    /// Render series from a trace CSV as an SVG line chart.
    Plot {
        csv: PathBuf,
        /// `layer:kind`, e.g. `gcn1:act_std`; repeatable. Defaults to all series.
        #[arg(long)]
        series: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Cache directory for downloaded datasets; overrides $GNNLAB_CACHE.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Fold workers. Results do not depend on this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding the dataset's `{name}_*.txt` files; skips the cache.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// One of mlp, gcn_r_mlp, gcn_mlp, jk_sum, probe4.
    #[arg(long)]
    model: Option<String>,
    /// One of attributes, label_onehot, degree_onehot.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Apply ReInit after the standard initialisation.
    #[arg(long)]
    reinit: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the per-fold trace CSVs.
    #[arg(long)]
    no_diagnostics: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Experiment config; repeat to compare variants.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Comma-separated epoch budgets, e.g. `10,50,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    epochs: Vec<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

/// Failure split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<gnnlab::Error> for Failure {
    fn from(e: gnnlab::Error) -> Self {
        use gnnlab::Error::*;
        match e {
            Spec(_) | Config(_) | Stratification(_) => Failure::Usage(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn cache_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Usage)
}

fn load_dataset(cfg: &DatasetConfig, cache: &Path) -> Result<Dataset64, Failure> {
    if cfg.name.is_empty() {
        return Err(usage(
            "no dataset given (use --dataset or dataset.name in the config)",
        ));
    }
    let dir = match &cfg.path {
        Some(p) => p.clone(),
        None => fetch_tu(&cfg.name, &cfg.url, cache)?.path,
    };
    let opts = ParseOptions {
        policy: cfg.feature_policy,
        degree_cap: cfg.degree_cap,
    };
    let ds = parse_tu_with(&dir, &cfg.name, &opts)?;
    info!(
        "{}: {} graphs, {} classes, {} features ({:?})",
        ds.name,
        ds.len(),
        ds.num_classes,
        ds.feature_dim,
        ds.feature_policy
    );
    Ok(ds)
}

fn run_experiment(
    cfg: &ExperimentConfig,
    ds: &Dataset64,
    jobs: usize,
    fold: FoldOptions,
) -> Result<RunOutput, Failure> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let split = stratify(&ds.labels(), cfg.folds.count, cfg.folds.seed)?;
    let opts = RunOptions { jobs, fold };
    Ok(run_cv(ds, &split, &cfg.model, &cfg.train, &opts)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_fetch(name: &str, cache_dir_flag: Option<PathBuf>, url_base: &str) -> Result<(), Failure> {
    let cache = cache_dir(cache_dir_flag);
    let fetched = fetch_tu(name, url_base, &cache)?;
    let status = if fetched.cached {
        "cached"
    } else {
        "downloaded"
    };
    println!("{} ({status})", fetched.path.display());
    Ok(())
}

fn parse_policy(s: &str) -> Result<FeaturePolicy, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        usage(format!(
            "unknown feature policy {s:?} (attributes, label_onehot, degree_onehot)"
        ))
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = args.dataset {
        cfg.dataset.name = name;
    }
    if let Some(dir) = args.data_dir {
        cfg.dataset.path = Some(dir);
    }
    if let Some(kind) = args.model {
        cfg.model.kind = kind.parse::<ModelKind>()?;
    }
    if let Some(policy) = args.features {
        cfg.dataset.feature_policy = Some(parse_policy(&policy)?);
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(wd) = args.weight_decay {
        cfg.train.weight_decay = wd;
    }
    if let Some(bs) = args.batch_size {
        cfg.train.batch_size = bs;
    }
    if args.reinit {
        cfg.train.init.kind = InitKind::StandardThenReinit;
    }
    if let Some(folds) = args.folds {
        cfg.folds.count = folds;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if args.no_diagnostics {
        cfg.diagnostics = false;
    }
    if cfg.folds.count < 2 {
        return Err(usage(format!(
            "--folds must be at least 2, got {}",
            cfg.folds.count
        )));
    }
    cfg.model.validate()?;
    cfg.train.validate()?;

    let ds = load_dataset(&cfg.dataset, &cache_dir(args.common.cache_dir))?;
    let fold_opts = FoldOptions {
        trace: cfg.diagnostics,
        eval_at: Vec::new(),
    };
    let run = run_experiment(&cfg, &ds, args.common.jobs, fold_opts)?;

    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_json(&cfg.output_dir.join("report.json"), &run.report)?;
    for (i, trace) in run.traces.iter().enumerate() {
        emit_csv(
            trace.events(),
            &cfg.output_dir.join(format!("trace_fold{i}.csv")),
        )?;
    }
    println!(
        "{} {}: {:.2} ± {:.2} over {} folds ({})",
        run.report.dataset,
        cfg.variant_name(),
        run.report.mean,
        run.report.std,
        run.report.folds.len(),
        cfg.output_dir.join("report.json").display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut budgets = args.epochs.clone();
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(usage("--epochs needs one or more positive budgets"));
    }
    budgets.sort_unstable();
    budgets.dedup();
    let max_epochs = *budgets.last().expect("non-empty");

    let cache = cache_dir(args.common.cache_dir);
    let mut configs = Vec::new();
    for path in &args.config {
        let mut cfg = load_config(path)?;
        if let Some(dir) = &args.data_dir {
            cfg.dataset.path = Some(dir.clone());
        }
        if let Some(folds) = args.folds {
            cfg.folds.count = folds;
        }
        // One run to the largest budget, evaluated at every smaller one:
        // training never depends on the total epoch count.
        cfg.train.epochs = max_epochs;
        cfg.model.validate()?;
        cfg.train.validate()?;
        configs.push(cfg);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut rows = Vec::new();
    for cfg in &configs {
        let ds = load_dataset(&cfg.dataset, &cache)?;
        let fold_opts = FoldOptions {
            trace: false,
            eval_at: budgets.clone(),
        };
        let run = run_experiment(cfg, &ds, args.common.jobs, fold_opts)?;
        let variant = cfg.variant_name();
        write_json(
            &args.out.join(format!("{variant}_report.json")),
            &run.report,
        )?;
        for (b, &epochs) in budgets.iter().enumerate() {
            let accs: Vec<f64> = run
                .report
                .folds
                .iter()
                .map(|f| f.checkpoints[b].accuracy)
                .collect();
            let (mean, std) = gnnlab::training::mean_std(&accs);
            rows.push((epochs, mean, std, variant.clone()));
        }
    }
    rows.sort_by_key(|r| r.0);

    let mut csv = String::from("epochs,mean_acc,std_acc,variant\n");
    for (epochs, mean, std, variant) in &rows {
        let _ = writeln!(csv, "{epochs},{mean},{std},{variant}");
    }
    let path = args.out.join("accuracy_vs_epochs.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn cmd_plot(csv: &Path, series: &[String], out: &Path) -> Result<(), Failure> {
    let series = series
        .iter()
        .map(|s| s.parse::<Series>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.into()))?;
    render_svg(csv, &series, out)?;
    println!("{}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fetch {
            name,
            cache_dir,
            url_base,
        } => cmd_fetch(&name, cache_dir, &url_base),
        Command::Train(args) => cmd_train(args),
        Command::SweepEpochs(args) => cmd_sweep(args),
        Command::Plot { csv, series, out } => cmd_plot(&csv, &series, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
