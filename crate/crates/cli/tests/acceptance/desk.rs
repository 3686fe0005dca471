//! Desk-scale training runs driven by the configs in `configs/desk`.
//!
//! Finished runs are kept under the cargo target directory and reused when
//! the resolved config, final checkpoint and full metrics log are all
//! present, so criteria sharing a run train it once.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dicg_cli::commands::{self, RunFiles, TrainArgs};
use dicg_cli::RunConfig;
use dicg_core::trainer::{count_rows, evaluate, read_csv, EvalMetrics, MetricsRow};

pub const SEEDS: u64 = 5;
/// Final return is the mean over this many closing iterations.
pub const FINAL_WINDOW: usize = 5;
pub const GREEDY_EPISODES: usize = 100;

pub fn config_path(stem: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/desk/{stem}.toml"))
}

/// Debug and release builds keep separate caches so stored training times
/// stay comparable.
pub fn cache_root() -> PathBuf {
    let name = if cfg!(debug_assertions) {
        "acceptance-debug"
    } else {
        "acceptance"
    };
    Path::new(env!("CARGO_TARGET_TMPDIR")).join(name)
}

pub struct DeskRun {
    pub config: RunConfig,
    pub files: RunFiles,
    /// Training time, measured when the run was trained.
    pub seconds: f64,
    pub reused: bool,
}

fn resolved(stem: &str, seed: u64, iterations: Option<usize>, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&config_path(stem)).unwrap();
    cfg.seed = seed;
    cfg.out = dir.to_path_buf();
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    cfg
}

/// Trains `stem` with `seed` into `dir`, or reuses an identical finished run.
pub fn train_into(stem: &str, seed: u64, iterations: Option<usize>, dir: &Path, reuse: bool) -> DeskRun {
    let config = resolved(stem, seed, iterations, dir);
    let files = RunFiles { dir: dir.to_path_buf() };
    let seconds_file = dir.join("train_seconds.txt");
    let finished = || -> Option<f64> {
        let same = fs::read_to_string(files.config()).ok()? == config.to_toml();
        let complete = files.final_checkpoint().exists() && count_rows(&files.metrics()).ok()? == config.iterations;
        (same && complete).then_some(())?;
        fs::read_to_string(&seconds_file).ok()?.trim().parse().ok()
    };
    if reuse {
        if let Some(seconds) = finished() {
            return DeskRun {
                config,
                files,
                seconds,
                reused: true,
            };
        }
    }
    let start = Instant::now();
    let files = commands::train(&TrainArgs {
        config: config_path(stem),
        seed: Some(seed),
        out: Some(dir.to_path_buf()),
        workers: None,
        iterations,
        overwrite: true,
    })
    .unwrap_or_else(|e| panic!("training {stem} seed {seed}: {e}"));
    let seconds = start.elapsed().as_secs_f64();
    fs::write(&seconds_file, format!("{seconds}\n")).unwrap();
    DeskRun {
        config,
        files,
        seconds,
        reused: false,
    }
}

pub fn run(stem: &str, seed: u64, iterations: Option<usize>) -> DeskRun {
    let tag = match iterations {
        Some(i) => format!("{stem}_it{i}_s{seed}"),
        None => format!("{stem}_s{seed}"),
    };
    let dir = cache_root().join(tag);
    let r = train_into(stem, seed, iterations, &dir, true);
    eprintln!(
        "  {stem} seed {seed}: {} ({:.0} s)",
        if r.reused { "reused" } else { "trained" },
        r.seconds
    );
    r
}

pub fn metrics(run: &DeskRun) -> Vec<MetricsRow> {
    read_csv(&run.files.metrics(), &MetricsRow::HEADER).unwrap()
}

pub fn final_return(run: &DeskRun) -> f64 {
    let rows = metrics(run);
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|r| r.mean_return).sum::<f64>() / tail.len() as f64
}

/// Greedy episodes of the final checkpoint.
pub fn greedy(run: &DeskRun, seed: u64) -> EvalMetrics {
    let (model, store, mut world) = commands::load_model(&run.config, &run.files.final_checkpoint()).unwrap();
    evaluate(&model, &store, world.as_mut(), GREEDY_EPISODES, seed, true).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn fmt_all(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}
