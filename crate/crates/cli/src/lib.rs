//! Command implementations behind the `prefgame` binary.
//!
//! Every command reads an effective configuration, writes its outputs plus
//! a `config.toml` echo into one directory, and returns a short text summary.
//! All randomness comes from the global seed through named substreams:
//! `synthdata` (generation), `init` (model and table initialisation),
//! `shuffle` (mini-batch order), `montecarlo` (self-play sampling) and
//! `restart/k` (capacity search).

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use prefgame_core::decomposition::transitive_from_potential;
use prefgame_core::models::{self, accuracy_by_context, EmbeddingTable, GroupAccuracy, ModelSpec, PairDataset, PreferenceModel, ScoreHead};
use prefgame_core::rng::substream;
use prefgame_core::selfplay::{self, Checkpoints, Estimation, OracleSchedule, SolverConfig, TrajectoryReport};
use prefgame_core::synthdata::{generate_mode, instances_to_jsonl, to_pair_dataset, SynthMetadata};
use prefgame_core::witnesses::{self, SearchConfig, SignPattern};
use prefgame_core::{decompose, transitivity_fraction, PrefError, PreferenceScoreMatrix, TabularPolicy};
use serde::{Deserialize, Serialize};
use serde_json::json;

use config::{ConfigFile, DecomposeConfig, EstimationKind, FitConfig, GenDataConfig, PatternKind, ScheduleKind, SelfplayConfig, WitnessCheck, WitnessConfig};

/// Columns of `history.csv` written by `fit`.
pub const HISTORY_HEADER: [&str; 3] = ["epoch", "loss", "accuracy"];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PrefError> for CliError {
    fn from(e: PrefError) -> Self {
        match e {
            PrefError::Training { .. } | PrefError::Oracle { .. } | PrefError::State(_) | PrefError::Generation(_) => {
                CliError::Numeric(e.to_string())
            }
            PrefError::Domain(_) | PrefError::Shape { .. } | PrefError::Data(_) => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialise");
    s.push('\n');
    s
}

fn prepare(out: &Path, echo: &ConfigFile) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    write(out, "config.toml", &echo.to_toml())?;
    Ok(())
}

/// A score matrix file: `{"n": .., "upper": [..]}` or a full row list,
/// either bare or as `{"rows": [[..]]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Upper { n: usize, upper: Vec<f64> },
    Rows { rows: Vec<Vec<f64>> },
    Bare(Vec<Vec<f64>>),
}

pub fn load_matrix(path: &Path) -> Result<PreferenceScoreMatrix> {
    let text = read(path)?;
    // Parse to a value first so syntax errors keep their line and column.
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let raw: MatrixFile = serde_json::from_value(value)
        .map_err(|_| CliError::Data(format!("{}: expected {{\"n\", \"upper\"}} or a list of rows", path.display())))?;
    let m = match raw {
        MatrixFile::Upper { n, upper } => PreferenceScoreMatrix::from_upper(n, &upper),
        MatrixFile::Rows { rows } | MatrixFile::Bare(rows) => PreferenceScoreMatrix::from_rows(&rows),
    };
    m.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecomposeSummary {
    pub n: usize,
    pub potential: Vec<f64>,
    pub transitivity_fraction: Option<f64>,
    pub reconstruction_error: f64,
    pub max_cyclic_row_sum: f64,
}

pub fn cmd_decompose(cfg: &DecomposeConfig, seed: u64, out: &Path) -> Result<String> {
    if cfg.input.as_os_str().is_empty() {
        return Err(CliError::Usage("decompose needs an input matrix".into()));
    }
    let m = load_matrix(&cfg.input)?;
    prepare(out, &ConfigFile { seed: Some(seed), decompose: Some(cfg.clone()), ..Default::default() })?;
    let d = decompose(&m);
    let fraction = transitivity_fraction(&m).ok();
    let summary = DecomposeSummary {
        n: m.n(),
        potential: d.potential().to_vec(),
        transitivity_fraction: fraction,
        reconstruction_error: d.reconstruct().sub(&m)?.max_abs(),
        max_cyclic_row_sum: d.max_cyclic_row_sum(),
    };
    write(out, "decomposition.json", &to_json(&d))?;
    write(out, "summary.json", &to_json(&summary))?;
    let mut text = format!("f = {:?}\n", d.potential());
    match fraction {
        Some(f) => writeln!(text, "transitivity fraction = {f}").unwrap(),
        None => writeln!(text, "transitivity fraction undefined (zero game)").unwrap(),
    }
    Ok(text)
}

pub fn cmd_gen_data(cfg: &GenDataConfig, seed: u64, out: &Path) -> Result<String> {
    if cfg.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    prepare(out, &ConfigFile { seed: Some(seed), gen_data: Some(cfg.clone()), ..Default::default() })?;
    let instances = generate_mode(cfg.mode, seed, cfg.count)?;
    let pairs = to_pair_dataset(&instances)?;
    write(out, "pairs.jsonl", &pairs.to_jsonl())?;
    write(out, "instances.jsonl", &instances_to_jsonl(&instances))?;
    write(out, "metadata.json", &to_json(&SynthMetadata { instances: instances.len(), mode: cfg.mode, seed }))?;
    Ok(format!("{} instances, {} pair records\n", instances.len(), pairs.len()))
}

/// A trained model together with the table values it was trained with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: PreferenceModel,
    pub items: EmbeddingTable,
    pub contexts: EmbeddingTable,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub seed: u64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub per_context: Vec<GroupAccuracy>,
    pub mean_embedding: Option<Vec<f64>>,
}

/// Initialises a model (and any tables) from `seed` and trains it.
pub fn train(cfg: &FitConfig, seed: u64, data: &PairDataset) -> Result<models::FitReport> {
    let subspaces = cfg.subspaces()?;
    let mut spec = ModelSpec::new(cfg.kind, cfg.feature_dim, subspaces);
    spec.context_dim = cfg.context_dim;
    spec.init_scale = cfg.init_scale;
    spec.gate_init = cfg.gate_init;
    spec.c1 = cfg.c1;
    spec.c2 = cfg.c2;
    spec.tau = cfg.tau;
    spec.clip = Some(cfg.clip);
    spec.unit_norm = cfg.unit_norm;
    let mut rng = substream(seed, "init");
    let mut data = data.clone();
    if data.is_tabular() {
        data.init_tabular(cfg.feature_dim, cfg.context_dim, cfg.init_scale, &mut rng)?;
    }
    let model = PreferenceModel::init(&spec, &mut rng)?;
    let fit_cfg = models::FitConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        train_weights: cfg.train_weights,
    };
    Ok(models::fit(&model, &data, &fit_cfg)?)
}

pub fn cmd_fit(cfg: &FitConfig, seed: u64, out: &Path) -> Result<String> {
    if cfg.dataset.as_os_str().is_empty() {
        return Err(CliError::Usage("fit needs a dataset".into()));
    }
    if cfg.epochs == 0 {
        return Err(CliError::Usage("epochs must be at least 1".into()));
    }
    cfg.subspaces()?;
    let data = PairDataset::from_jsonl(&read(&cfg.dataset)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.dataset.display())))?;
    prepare(out, &ConfigFile { seed: Some(seed), fit: Some(cfg.clone()), ..Default::default() })?;
    let report = train(cfg, seed, &data)?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(HISTORY_HEADER).map_err(|e| CliError::Data(e.to_string()))?;
    for (e, (loss, acc)) in report.loss_history.iter().zip(&report.accuracy_history).enumerate() {
        csv.write_record([(e + 1).to_string(), loss.to_string(), acc.to_string()])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let csv = String::from_utf8(csv.into_inner().map_err(|e| CliError::Data(e.to_string()))?).expect("csv is utf-8");
    write(out, "history.csv", &csv)?;

    let fitted = FittedModel {
        model: report.model.clone(),
        items: report.dataset.items().clone(),
        contexts: report.dataset.contexts().clone(),
    };
    write(out, "model.json", &to_json(&fitted))?;
    let summary = FitSummary {
        seed,
        final_loss: *report.loss_history.last().expect("at least one epoch"),
        final_accuracy: *report.accuracy_history.last().expect("at least one epoch"),
        per_context: accuracy_by_context(&report.model, &report.dataset)?,
        mean_embedding: report.mean_embedding.clone(),
    };
    write(out, "accuracy.json", &to_json(&summary))?;
    let worst = summary.per_context.iter().map(GroupAccuracy::fraction).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "final loss {:.6}, accuracy {:.4}, worst context {:.4}\n",
        summary.final_loss, summary.final_accuracy, worst
    ))
}

/// The game induced by a fitted model on `items` under `context`, split
/// into a transitive and a cyclic part.
///
/// For the hybrid model the reward head supplies the transitive part. The
/// cyclic head's scores are decomposed again: their potential is added to
/// the transitive part, so the two parts still sum to the model's scores.
pub fn model_game(fitted: &FittedModel, items: &[String], context: Option<&str>) -> Result<(PreferenceScoreMatrix, PreferenceScoreMatrix)> {
    if items.len() < 2 {
        return Err(CliError::Usage("selfplay needs at least two items".into()));
    }
    let rows: Vec<&[f64]> = items
        .iter()
        .map(|id| {
            fitted.items.position(id).map(|k| fitted.items.get(k)).ok_or_else(|| CliError::Data(format!("unknown item id {id:?}")))
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = match context {
        Some(id) => {
            let k = fitted.contexts.position(id).ok_or_else(|| CliError::Data(format!("unknown context id {id:?}")))?;
            fitted.contexts.get(k).to_vec()
        }
        None if fitted.model.context_dim() == 0 => Vec::new(),
        None => return Err(CliError::Usage("this model needs a context id".into())),
    };
    let n = items.len();
    let score_with = |f: &dyn Fn(&[f64], &[f64]) -> prefgame_core::Result<f64>| -> Result<PreferenceScoreMatrix> {
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(rows[i], rows[j])?);
            }
        }
        Ok(PreferenceScoreMatrix::from_upper(n, &upper)?)
    };
    match &fitted.model.head {
        ScoreHead::Hrc(h) => {
            let rewards: Vec<f64> = rows.iter().map(|r| h.bt.reward(r).map(|v| h.c1 * v)).collect::<prefgame_core::Result<_>>()?;
            let cyc = decompose(&score_with(&|a, b| h.gpm.score(&x, a, b).map(|s| h.c2 * s))?);
            let mean = rewards.iter().sum::<f64>() / n as f64;
            let potential: Vec<f64> = rewards.iter().zip(cyc.potential()).map(|(r, p)| r - mean + p).collect();
            Ok((transitive_from_potential(&potential)?, cyc.cyclic().clone()))
        }
        _ => {
            let d = decompose(&score_with(&|a, b| fitted.model.score(&x, a, b))?);
            Ok((d.transitive().clone(), d.cyclic().clone()))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GameSummary {
    pub items: Vec<String>,
    pub limit: PreferenceScoreMatrix,
    pub transitive: PreferenceScoreMatrix,
    pub cyclic: PreferenceScoreMatrix,
}

pub fn cmd_selfplay(cfg: &SelfplayConfig, seed: u64, out: &Path) -> Result<String> {
    if cfg.iterations == 0 {
        return Err(CliError::Usage("iterations must be at least 1".into()));
    }
    if cfg.checkpoint_every == Some(0) {
        return Err(CliError::Usage("checkpoint stride must be positive".into()));
    }
    if cfg.estimation == EstimationKind::MonteCarlo && cfg.samples == 0 {
        return Err(CliError::Usage("Monte Carlo estimation needs at least one sample".into()));
    }
    let (names, transitive, cyclic) = match (&cfg.matrix, &cfg.model) {
        (Some(path), None) => {
            let m = load_matrix(path)?;
            let d = decompose(&m);
            let names = if cfg.items.is_empty() { (0..m.n()).map(|i| i.to_string()).collect() } else { cfg.items.clone() };
            if names.len() != m.n() {
                return Err(CliError::Usage(format!("{} item names for a {}-action game", names.len(), m.n())));
            }
            (names, d.transitive().clone(), d.cyclic().clone())
        }
        (None, Some(path)) => {
            let fitted: FittedModel = serde_json::from_str(&read(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let (t, c) = model_game(&fitted, &cfg.items, cfg.context.as_deref())?;
            (cfg.items.clone(), t, c)
        }
        _ => return Err(CliError::Usage("give exactly one of a matrix file or a fitted model".into())),
    };
    prepare(out, &ConfigFile { seed: Some(seed), selfplay: Some(cfg.clone()), ..Default::default() })?;

    let sched = match cfg.schedule {
        ScheduleKind::Static => OracleSchedule::fixed(transitive.add(&cyclic)?),
        ScheduleKind::Hrc => OracleSchedule::hrc(transitive.clone(), cyclic.clone(), cfg.lambda)?.with_exponent(cfg.exponent)?,
    };
    let solver = SolverConfig {
        eta: cfg.eta,
        iterations: cfg.iterations,
        estimation: match cfg.estimation {
            EstimationKind::Exact => Estimation::Exact,
            EstimationKind::MonteCarlo => Estimation::MonteCarlo { samples: cfg.samples, seed },
        },
        checkpoints: cfg.checkpoint_every.map_or(Checkpoints::PowersOfTwo, Checkpoints::Every),
    };
    let n = transitive.n();
    let report: TrajectoryReport = selfplay::run(&sched, &solver, &TabularPolicy::uniform(n))?;
    write(out, "trajectory.json", &to_json(&report))?;
    write(out, "trajectory.csv", &report.to_csv())?;
    let game = GameSummary { items: names, limit: sched.limit(), transitive, cyclic };
    write(out, "game.json", &to_json(&game))?;
    Ok(format!(
        "eta {:.6}, final gap {:.6} at t = {}, mixture {:?}\n",
        report.eta,
        report.final_gap,
        report.iterations,
        report.final_mixture().probs()
    ))
}

pub fn cmd_witness(cfg: &WitnessConfig, seed: u64, out: &Path) -> Result<String> {
    let usage = |e: PrefError| CliError::Usage(e.to_string());
    let verdict = match cfg.check {
        WitnessCheck::D1Semicircle => serde_json::to_value(witnesses::d1_report(&cfg.angles).map_err(usage)?),
        WitnessCheck::D2Construction => serde_json::to_value(witnesses::dominant_cycle_report(cfg.n).map_err(usage)?),
        WitnessCheck::HardCycle => serde_json::to_value(witnesses::hard_cycle_report(cfg.n, cfg.d).map_err(usage)?),
        WitnessCheck::Capacity => {
            let pattern = match cfg.pattern {
                PatternKind::Rps => SignPattern::rps(),
                PatternKind::Cycle => SignPattern::cycle(cfg.n).map_err(usage)?,
                PatternKind::DominantCycle => SignPattern::dominant_cycle(cfg.n).map_err(usage)?,
            };
            let search = SearchConfig {
                restarts: cfg.restarts,
                iterations: cfg.iterations,
                learning_rate: cfg.learning_rate,
                sharpness: cfg.sharpness,
                seed,
            };
            let r = witnesses::pattern_capacity_search(&pattern, cfg.d, &search).map_err(usage)?;
            Ok(json!({
                "construction": "capacity",
                "parameters": { "pattern": cfg.pattern, "items": pattern.len(), "d": cfg.d },
                "accuracy": r.accuracy,
                "satisfied": r.satisfied,
                "constrained": r.constrained,
                "feasibility": r.satisfied == r.constrained,
                "restart": r.restart,
                "embedding": r.embedding,
            }))
        }
    }
    .expect("verdicts serialise");
    prepare(out, &ConfigFile { seed: Some(seed), witness: Some(cfg.clone()), ..Default::default() })?;
    write(out, "verdict.json", &to_json(&verdict))?;
    let margin = verdict.get("margin").and_then(|m| m.as_f64());
    Ok(match cfg.check {
        WitnessCheck::Capacity => format!("capacity accuracy {}\n", verdict["accuracy"]),
        _ => format!("feasible {}, margin {:?}\n", verdict["feasibility"], margin),
    })
}
