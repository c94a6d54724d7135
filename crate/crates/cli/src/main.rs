use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use docrectify::config::{ConfigError, RunConfig};
use docrectify::grid::GridError;
use docrectify::image::Image;
use docrectify::io::{load_image, save_image, write_atomic, PnmError};
use docrectify::metrics::{evaluate, EvalPair};
use docrectify::pipeline::{dewarp, DewarpError, GridSource};
use docrectify::postproc::adaptive_smooth;
use docrectify::synth::{write_dataset, SynthError};
use docrectify::train::{load_model, Dataset, StepLoss, TrainError, Trainer, LOG_HEADER};

#[derive(Parser)]
#[command(name = "docrectify", version, about = "Rectify photographed document pages")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic warped-document dataset.
    Synth(SynthArgs),
    /// Train a model on a synthetic dataset.
    Train(TrainArgs),
    /// Rectify one image.
    Dewarp(DewarpArgs),
    /// Score rectified images against flat references.
    Eval(EvalArgs),
    /// Apply only the sharpness-budgeted smoothing.
    Postproc(PostprocArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Loss log (CSV); defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct DewarpArgs {
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "identity_grid")]
    model: Option<PathBuf>,
    /// Use the identity map instead of a model.
    #[arg(long, conflicts_with = "model")]
    identity_grid: bool,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the full-resolution backward map.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[arg(long)]
    no_postproc: bool,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON list of `{"name", "rectified", "scan"}` entries; relative paths
    /// resolve against the list's directory.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct PostprocArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Config(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Config(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PnmError> for CliError {
    fn from(e: PnmError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Contract(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => CliError::Config(e.to_string()),
            SynthError::Rejected { .. } | SynthError::NotInvertible { .. } => CliError::Numeric(e.to_string()),
            SynthError::Pnm(_) | SynthError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Model(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Tensor(_) => CliError::Numeric(e.to_string()),
            TrainError::Dataset(_) | TrainError::Checkpoint { .. } | TrainError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<DewarpError> for CliError {
    fn from(e: DewarpError) -> Self {
        match e {
            DewarpError::Model(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut cfg = args.config.load()?;
    if let Some(v) = args.count {
        cfg.synth.count = v;
    }
    if let Some(v) = args.size {
        cfg.synth.size = v;
    }
    if let Some(v) = args.seed {
        cfg.synth.seed = v;
    }
    cfg.validate()?;
    let s = &cfg.synth;
    let manifest = write_dataset(&args.out, s.count, s.size, s.seed, &s.augment())?;
    log::info!("wrote {} samples to {}", manifest.count, args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = args.config.load()?;
    if let Some(v) = args.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    cfg.validate()?;
    let data = Dataset::load(&args.data)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::load(path)?;
            t.config.steps = cfg.train.steps;
            t
        }
        None => Trainer::new(cfg.model, cfg.train)?,
    };
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    let mut log_text = format!("{LOG_HEADER}\n");
    let out = args.out.clone();
    trainer.run(
        &data,
        |l: &StepLoss| {
            log_text.push_str(&l.csv_row());
            log_text.push('\n');
            log::info!("{}", l.csv_row());
            Ok(())
        },
        |t| t.save(&out),
    )?;
    write_atomic(&log_path, log_text.as_bytes()).map_err(io_error(&log_path))?;
    Ok(())
}

fn run_dewarp(args: DewarpArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let image = load_image(&args.input)?;
    let mut model = match &args.model {
        Some(p) if !args.identity_grid => Some(load_model(p)?),
        _ => None,
    };
    let source = match model.as_mut() {
        Some(m) => GridSource::Model(m),
        None => GridSource::Identity,
    };
    let postproc = (!args.no_postproc).then_some(&cfg.postproc);
    let out = dewarp(&image, source, postproc)?;
    if let Some(s) = &out.postproc {
        log::info!("postproc attempts {} sigma_r {:?} ratio {:.4}", s.attempts, s.sigma_r, s.ratio);
    }
    if let Some(path) = &args.grid_out {
        out.grid.save(path)?;
    }
    save_image(&out.image, &args.out)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    name: String,
    rectified: PathBuf,
    scan: PathBuf,
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let text = std::fs::read_to_string(&args.pairs).map_err(io_error(&args.pairs))?;
    let entries: Vec<PairEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.pairs.display())))?;
    let base = args.pairs.parent().unwrap_or(Path::new("."));
    let pairs: Vec<EvalPair> = entries
        .iter()
        .map(|e| EvalPair::load(e.name.clone(), &base.join(&e.rectified), &base.join(&e.scan)))
        .collect();
    let report = evaluate(&pairs, &cfg.metrics).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&args.out, report.to_csv().as_bytes()).map_err(io_error(&args.out))?;
    if let Some(path) = &args.json {
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        write_atomic(path, &json).map_err(io_error(path))?;
    }
    print!("{}", report.summary());
    if report.items.is_empty() {
        return Err(CliError::Io("no pair could be evaluated".into()));
    }
    Ok(())
}

fn run_postproc(args: PostprocArgs) -> Result<(), CliError> {
    let mut cfg = args.config.load()?;
    if let Some(v) = args.rho {
        cfg.postproc.rho = v;
    }
    if let Some(v) = args.sigma_s {
        cfg.postproc.sigma_s = v;
    }
    if let Some(v) = args.sigma_r {
        cfg.postproc.sigma_r = v;
    }
    cfg.validate()?;
    let image: Image = load_image(&args.input)?;
    let s = adaptive_smooth(&image, &cfg.postproc);
    if s.sigma_r.is_none() {
        log::warn!("every attempt lost too much sharpness; writing the input unchanged");
    }
    save_image(&s.image, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Dewarp(a) => run_dewarp(a),
        Command::Eval(a) => run_eval(a),
        Command::Postproc(a) => run_postproc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
