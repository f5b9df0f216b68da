use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefgame::config::{
    ConfigFile, DecomposeConfig, EstimationKind, FitConfig, GenDataConfig, PatternKind, ScheduleKind, SelfplayConfig,
    WitnessCheck, WitnessConfig,
};
use prefgame::{cmd_decompose, cmd_fit, cmd_gen_data, cmd_selfplay, cmd_witness, CliError};
use prefgame_core::models::ModelKind;
use prefgame_core::selfplay::{StepRule, StepSize};
use prefgame_core::synthdata::SynthMode;

const AFTER_HELP: &str = "\
Outputs (all commands also write config.toml, the effective configuration):
  decompose  decomposition.json {f, cyclic_upper}; summary.json
  gen-data   pairs.jsonl, instances.jsonl, metadata.json
  fit        model.json, accuracy.json, history.csv (epoch,loss,accuracy)
  selfplay   trajectory.json, game.json, trajectory.csv (t,gap,epsilon_t,entropy)
  witness    verdict.json

Matrix files are JSON: {\"n\": 3, \"upper\": [s01, s02, s12]} or a list of rows.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Logging: PREFGAME_LOG=error|info|debug.";

#[derive(Parser)]
#[command(name = "prefgame", version, about = "Transitive/cyclic preference games: data, models, witnesses and self-play", after_help = AFTER_HELP)]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for every random substream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a score matrix into transitive and cyclic parts.
    Decompose(DecomposeArgs),
    /// Generate cyclic or dominant+cycle synthetic pair data.
    GenData(GenDataArgs),
    /// Train a bt, gpm or hrc model on pair data.
    Fit(FitArgs),
    /// Run tabular self-play on a matrix or a fitted model's game.
    Selfplay(SelfplayArgs),
    /// Evaluate an embedding-capacity construction or check.
    Witness(WitnessArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    /// Score matrix file.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    mode: Option<SynthMode>,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Pair dataset (JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// bt, gpm or hrc.
    #[arg(long)]
    kind: Option<ModelKind>,
    /// 1 for bt, 2d for gpm, 2d+1 for hrc.
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Records per step; 0 means full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
}

#[derive(Args)]
struct SelfplayArgs {
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// model.json written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated item ids.
    #[arg(long, value_delimiter = ',')]
    items: Option<Vec<String>>,
    #[arg(long)]
    context: Option<String>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleKind>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// A positive number or "theory".
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    estimation: Option<EstimationKind>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct WitnessArgs {
    #[arg(long, value_enum)]
    check: Option<WitnessCheck>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Comma-separated angles in radians.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    angles: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pattern: Option<PatternKind>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_eta(s: &str) -> Result<StepSize, CliError> {
    if s == "theory" {
        return Ok(StepSize::Named(StepRule::Theory));
    }
    s.parse().map(StepSize::Fixed).map_err(|_| CliError::Usage(format!("eta must be a number or \"theory\", got {s:?}")))
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.as_path();
    match cli.command {
        Command::Decompose(a) => {
            let mut c: DecomposeConfig = file.decompose.unwrap_or_default();
            set(&mut c.input, a.input);
            cmd_decompose(&c, seed, out)
        }
        Command::GenData(a) => {
            let mut c: GenDataConfig = file.gen_data.unwrap_or_default();
            set(&mut c.mode, a.mode);
            set(&mut c.count, a.count);
            cmd_gen_data(&c, seed, out)
        }
        Command::Fit(a) => {
            let mut c: FitConfig = file.fit.unwrap_or_default();
            set(&mut c.dataset, a.dataset);
            set(&mut c.kind, a.kind);
            set(&mut c.dim, a.dim);
            set(&mut c.epochs, a.epochs);
            set(&mut c.learning_rate, a.learning_rate);
            set(&mut c.batch_size, a.batch_size);
            set(&mut c.feature_dim, a.feature_dim);
            cmd_fit(&c, seed, out)
        }
        Command::Selfplay(a) => {
            let mut c: SelfplayConfig = file.selfplay.unwrap_or_default();
            if a.matrix.is_some() {
                c.matrix = a.matrix;
            }
            if a.model.is_some() {
                c.model = a.model;
            }
            set(&mut c.items, a.items);
            if a.context.is_some() {
                c.context = a.context;
            }
            set(&mut c.schedule, a.schedule);
            set(&mut c.lambda, a.lambda);
            set(&mut c.eta, a.eta.as_deref().map(parse_eta).transpose()?);
            set(&mut c.iterations, a.iterations);
            set(&mut c.estimation, a.estimation);
            set(&mut c.samples, a.samples);
            if a.checkpoint_every.is_some() {
                c.checkpoint_every = a.checkpoint_every;
            }
            cmd_selfplay(&c, seed, out)
        }
        Command::Witness(a) => {
            let mut c: WitnessConfig = file.witness.unwrap_or_default();
            set(&mut c.check, a.check);
            set(&mut c.n, a.n);
            set(&mut c.d, a.d);
            set(&mut c.angles, a.angles);
            set(&mut c.pattern, a.pattern);
            cmd_witness(&c, seed, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PREFGAME_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    log::info!("writing outputs to {}", cli.out.display());
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
