//! Implementations behind each subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dicg_core::autodiff::{load_into, read_checkpoint, write_checkpoint, ParameterStore};
use dicg_core::model::Model;
use dicg_core::probes::{self, AttentionBucket, PredictionRow, ProbeSettings};
use dicg_core::trainer::{build_model, derive_seed, evaluate, CsvLog, EvalMetrics, EvalRow, MetricsRow, Trainer};
use dicg_core::worlds::World;
use serde::Serialize;

use crate::plot;
use crate::{CliError, RunConfig};

/// Iterations between checkpoints and between greedy evaluations.
pub const CHECKPOINT_EVERY: usize = 10;

pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub iterations: Option<usize>,
    pub overwrite: bool,
}

/// Files written by a training run.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn eval(&self) -> PathBuf {
        self.dir.join("eval.csv")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iteration:06}.ckpt"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }
    pub fn curve(&self) -> PathBuf {
        self.dir.join("curve.svg")
    }
}

fn save(store: &ParameterStore, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, store)?;
    w.flush()?;
    Ok(())
}

/// Trains for the configured budget, logging every iteration and writing a
/// checkpoint plus a greedy evaluation every [`CHECKPOINT_EVERY`]
/// iterations and at the end.
pub fn train(args: &TrainArgs) -> Result<RunFiles, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    cfg.validate()?;
    let files = RunFiles { dir: cfg.out.clone() };
    if files.metrics().exists() {
        if !args.overwrite {
            return Err(CliError::Config(format!(
                "{} already exists; choose another --out or pass --overwrite",
                files.metrics().display()
            )));
        }
        fs::remove_file(files.metrics())?;
        if files.eval().exists() {
            fs::remove_file(files.eval())?;
        }
    }
    fs::create_dir_all(&files.dir)?;
    fs::write(files.config(), cfg.to_toml())?;

    let mut trainer = Trainer::new(cfg.run_spec())?;
    let mut log = CsvLog::open(&files.metrics(), &MetricsRow::HEADER)?;
    let mut eval_log = CsvLog::open(&files.eval(), &EvalRow::HEADER)?;
    let mut last_saved = None;
    for _ in 0..cfg.iterations {
        let row = trainer.iterate()?;
        log.append(&row)?;
        if row.iteration % CHECKPOINT_EVERY == 0 {
            save(&trainer.store, &files.checkpoint(row.iteration))?;
            last_saved = Some(row.iteration);
            let m = trainer.evaluate(
                cfg.eval_episodes,
                derive_seed(cfg.seed, &[20, row.iteration as u64]),
                true,
            )?;
            eval_log.append(&EvalRow {
                iteration: row.iteration,
                episodes: m.episodes,
                mean_return: m.mean_return,
                success_rate: m.success_rate,
                mean_length: m.mean_length,
            })?;
        }
    }
    if last_saved != Some(trainer.iteration()) && trainer.iteration() > 0 {
        save(&trainer.store, &files.checkpoint(trainer.iteration()))?;
    }
    save(&trainer.store, &files.final_checkpoint())?;
    plot_files(
        &[(label_for(&files.metrics()), files.metrics())],
        &files.curve(),
        "iteration",
        "mean_return",
    )?;
    Ok(files)
}

/// Builds the configured model and loads a checkpoint into it.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(Model, ParameterStore, Box<dyn World>), CliError> {
    let world = cfg.world.build().map_err(|e| CliError::Config(format!("world: {e}")))?;
    let (model, mut store) = build_model(&cfg.run_spec(), world.as_ref())?;
    let file = File::open(checkpoint).map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    let entries = read_checkpoint(BufReader::new(file))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    load_into(&mut store, entries).map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    Ok((model, store, world))
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

/// One command-line evaluation; every cell is numeric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub greedy: u8,
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_length: f64,
}

impl EvalRecord {
    pub const HEADER: [&'static str; 6] = [
        "seed",
        "greedy",
        "episodes",
        "mean_return",
        "success_rate",
        "mean_length",
    ];
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub out: Option<PathBuf>,
}

/// Evaluates a checkpoint and appends the result to a CSV (by default
/// `evaluations.csv` beside the checkpoint).
pub fn eval(args: &EvalArgs) -> Result<(EvalMetrics, PathBuf), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let (model, store, mut world) = load_model(&cfg, &args.checkpoint)?;
    let m = evaluate(&model, &store, world.as_mut(), args.episodes, args.seed, args.greedy)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.checkpoint, "evaluations.csv"));
    CsvLog::open(&out, &EvalRecord::HEADER)?.append(&EvalRecord {
        seed: args.seed,
        greedy: u8::from(args.greedy),
        episodes: m.episodes,
        mean_return: m.mean_return,
        success_rate: m.success_rate,
        mean_length: m.mean_length,
    })?;
    Ok((m, out))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub struct AttentionArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub out: Option<PathBuf>,
}

/// Attention mass at distances ≥ this is reported alongside the buckets.
pub const FAR_DISTANCE: usize = 3;

pub struct AttentionReport {
    pub buckets: Vec<AttentionBucket>,
    pub far_mass: f64,
    pub out: PathBuf,
}

pub fn probe_attention(args: &AttentionArgs) -> Result<AttentionReport, CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let (model, store, mut world) = load_model(&cfg, &args.checkpoint)?;
    let record = probes::attention_rows(&model, &store, world.as_mut(), args.episodes, args.seed, args.greedy)?;
    let buckets = record.buckets();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.checkpoint, "attention.csv"));
    write_rows(&out, &buckets)?;
    Ok(AttentionReport {
        far_mass: record.far_mass(FAR_DISTANCE),
        buckets,
        out,
    })
}

pub struct PredictionArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub pairs: usize,
    pub epochs: usize,
    pub episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub out: Option<PathBuf>,
}

pub fn probe_prediction(args: &PredictionArgs) -> Result<(Vec<PredictionRow>, PathBuf), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let (model, store, mut world) = load_model(&cfg, &args.checkpoint)?;
    let data = probes::collect_embeddings(
        &model,
        &store,
        world.as_mut(),
        args.episodes,
        derive_seed(args.seed, &[1]),
        args.greedy,
    )?;
    let settings = ProbeSettings {
        pairs: args.pairs,
        epochs: args.epochs,
        seed: derive_seed(args.seed, &[2]),
        ..ProbeSettings::default()
    };
    let rows = probes::action_prediction(&data, &settings)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.checkpoint, "prediction.csv"));
    write_rows(&out, &rows)?;
    Ok((rows, out))
}

/// Group label of a metrics file: its parent directory name.
pub fn label_for(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Splits `LABEL=PATH`; a bare path is labelled by [`label_for`].
pub fn parse_input(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            (label_for(&path), path)
        }
    }
}

/// Renders labelled metrics files to an SVG; returns the warnings raised
/// while reading them.
pub fn plot_files(inputs: &[(String, PathBuf)], out: &Path, x: &str, y: &str) -> Result<Vec<String>, CliError> {
    let mut warnings = Vec::new();
    let mut groups: Vec<(String, Vec<plot::Curve>)> = Vec::new();
    for (label, path) in inputs {
        let curve = plot::read_curve(path, x, y, &mut warnings);
        match groups.iter_mut().find(|(l, _)| l == label) {
            Some((_, runs)) => runs.push(curve),
            None => groups.push((label.clone(), vec![curve])),
        }
    }
    if groups.iter().all(|(_, runs)| runs.iter().all(Vec::is_empty)) {
        warnings.push("no data points; writing an empty plot".into());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, plot::render(&groups, x, y))?;
    Ok(warnings)
}
