//! Two-agent one-step coordination game: the team is paid 1 only when both
//! agents pick action 0, so the exact expected reward of a policy is the
//! product of each agent's probability of action 0.

use std::fs;
use std::path::{Path, PathBuf};

use dicg_cli::RunConfig;
use dicg_core::autodiff::Graph;
use dicg_core::trainer::{CsvLog, MetricsRow, Trainer};
use dicg_core::worlds::World;

pub const ITERATIONS: usize = 200;
pub const TARGET: f64 = 0.95;
pub const SEEDS: u64 = 5;

pub fn config_path(algo: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/coordination_game_{algo}.toml"))
}

fn expected_reward(trainer: &Trainer, world: &mut dyn World) -> f64 {
    let obs = world.reset(0);
    let n = world.n_agents();
    let x = dicg_core::autodiff::Tensor::new(n, world.obs_dim(), obs.data).unwrap();
    let mut g = Graph::new(&trainer.store);
    let out = trainer.model.forward(&mut g, &x, &obs.alive).unwrap();
    let logits = g.value(out.logits);
    (0..n)
        .map(|i| {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
            (row[0] - max).exp() / z
        })
        .product()
}

pub struct Outcome {
    /// First iteration (from 1) whose expected reward reached the target.
    pub reached_at: Option<usize>,
    pub final_expected: f64,
}

/// Trains for [`ITERATIONS`] iterations, logging metrics to `metrics`.
pub fn run(algo: &str, seed: u64, metrics: &Path) -> Outcome {
    let mut cfg = RunConfig::load(&config_path(algo)).unwrap();
    cfg.seed = seed;
    let mut world = cfg.world.build().unwrap();
    let mut trainer = Trainer::new(cfg.run_spec()).unwrap();
    if metrics.exists() {
        fs::remove_file(metrics).unwrap();
    }
    fs::create_dir_all(metrics.parent().unwrap()).unwrap();
    let mut log = CsvLog::open(metrics, &MetricsRow::HEADER).unwrap();
    let mut reached_at = None;
    let mut expected = 0.0;
    for _ in 0..ITERATIONS {
        let row = trainer.iterate().unwrap();
        log.append(&row).unwrap();
        expected = expected_reward(&trainer, world.as_mut());
        if reached_at.is_none() && expected >= TARGET {
            reached_at = Some(row.iteration);
        }
    }
    Outcome {
        reached_at,
        final_expected: expected,
    }
}
