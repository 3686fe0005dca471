//! On-policy training: seeded rollouts, GAE, clipped PPO updates and
//! evaluation.

mod evaluate;
mod gae;
mod metrics;
mod ppo;
mod rollout;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use evaluate::{evaluate, EvalMetrics};
pub use gae::{gae_advantages, normalize};
pub use metrics::{count_rows, read_csv, write_metrics, CsvLog, EvalRow, MetricsRow};
pub use ppo::{ppo_loss, ppo_update, prepare, LossParts, Normalizers, Prepared, UpdateStats};
pub use rollout::{collect_rollouts, EpisodeStats, Segment, TrajectoryBatch};

use crate::autodiff::{Adam, ParameterStore};
use crate::dicg::BaselineMode;
use crate::error::{Error, Result};
use crate::model::{Algo, Model, ModelSpec, NetSizes, WorldKind};
use crate::worlds::{World, WorldConfig};

pub(crate) use rollout::{argmax, sample, stack};

/// Mixes a base seed with a stream path (splitmix64 finalizer per word).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut x = base;
    for &p in path {
        x = x
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Environment steps per iteration.
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            lr: 3e-4,
            gamma: 0.99,
            lambda: 0.97,
            entropy_coef: 0.1,
            value_coef: 0.5,
            epochs: 10,
            minibatches: 4,
            batch_size: 60_000,
            max_grad_norm: 10.0,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    /// Reference settings for a world: predator-prey uses entropy 0.1,
    /// traffic junction 0.02 (hard: batch 8·10⁴).
    pub fn defaults(world: &WorldConfig) -> Self {
        let base = Self::default();
        match world {
            WorldConfig::PredatorPrey(_) => base,
            WorldConfig::TrafficJunction(tj) => Self {
                entropy_coef: 0.02,
                batch_size: match tj.difficulty {
                    crate::worlds::Difficulty::Hard => 80_000,
                    _ => 60_000,
                },
                ..base
            },
            WorldConfig::CoordinationGame(_) => Self {
                entropy_coef: 0.01,
                batch_size: 64,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip > 0.0) {
            return bad(format!("ppo.clip must be positive, got {}", self.clip));
        }
        if !(self.lr >= 0.0) {
            return bad(format!("ppo.lr must be non-negative, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("ppo.gamma and ppo.lambda must lie in [0, 1]".into());
        }
        if self.minibatches == 0 {
            return bad("ppo.minibatches must be at least 1".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("ppo.max_grad_norm must be positive".into());
        }
        Ok(())
    }
}

impl From<&WorldConfig> for WorldKind {
    fn from(w: &WorldConfig) -> Self {
        match w {
            WorldConfig::PredatorPrey(_) => WorldKind::PredatorPrey,
            WorldConfig::TrafficJunction(_) => WorldKind::TrafficJunction,
            WorldConfig::CoordinationGame(_) => WorldKind::CoordinationGame,
        }
    }
}

/// Everything that defines a training run apart from the output location.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub world: WorldConfig,
    pub algo: Algo,
    pub sizes: NetSizes,
    pub baseline: BaselineMode,
    pub ppo: PpoConfig,
    pub seed: u64,
    /// World instances stepped in lockstep during collection.
    pub n_envs: usize,
    /// Threads used for collection; never changes results.
    pub workers: usize,
    /// Record real elapsed time in `wallclock_s` (otherwise 0, keeping logs
    /// byte-reproducible).
    pub record_wallclock: bool,
}

impl RunSpec {
    /// Reference sizes and PPO settings for `world` and `algo`.
    pub fn defaults(world: WorldConfig, algo: Algo, seed: u64) -> Self {
        Self {
            sizes: NetSizes::defaults(WorldKind::from(&world), algo),
            ppo: PpoConfig::defaults(&world),
            world,
            algo,
            baseline: BaselineMode::Mean,
            seed,
            n_envs: 8,
            workers: 1,
            record_wallclock: false,
        }
    }
}

/// Builds the model for a run and initializes its parameters from the seed.
pub fn build_model(spec: &RunSpec, world: &dyn World) -> Result<(Model, ParameterStore)> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let model = Model::new(
        &mut store,
        ModelSpec {
            algo: spec.algo,
            n_agents: world.n_agents(),
            obs_dim: world.obs_dim(),
            n_actions: world.n_actions(),
            sizes: spec.sizes.clone(),
            baseline: spec.baseline,
        },
        &mut rng,
    )?;
    Ok((model, store))
}

pub struct Trainer {
    pub spec: RunSpec,
    pub model: Model,
    pub store: ParameterStore,
    adam: Adam,
    worlds: Vec<Box<dyn World>>,
    eval_world: Box<dyn World>,
    iteration: usize,
    env_steps_total: usize,
    started: Instant,
    last_batch: Option<TrajectoryBatch>,
}

impl Trainer {
    pub fn new(spec: RunSpec) -> Result<Self> {
        spec.ppo.validate()?;
        if spec.n_envs == 0 {
            return Err(Error::Config("n_envs must be at least 1".into()));
        }
        let worlds = (0..spec.n_envs)
            .map(|_| spec.world.build())
            .collect::<Result<Vec<_>, _>>()?;
        let eval_world = spec.world.build()?;
        let (model, store) = build_model(&spec, eval_world.as_ref())?;
        Ok(Self {
            adam: Adam::with_lr(spec.ppo.lr),
            spec,
            model,
            store,
            worlds,
            eval_world,
            iteration: 0,
            env_steps_total: 0,
            started: Instant::now(),
            last_batch: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps_total(&self) -> usize {
        self.env_steps_total
    }

    /// The batch collected by the most recent iteration.
    pub fn last_batch(&self) -> Option<&TrajectoryBatch> {
        self.last_batch.as_ref()
    }

    /// Collect, estimate advantages, update; returns the iteration's
    /// metrics (`iteration` counts from 1).
    pub fn iterate(&mut self) -> Result<MetricsRow> {
        let it = self.iteration as u64;
        let batch = collect_rollouts(
            &self.model,
            &self.store,
            &mut self.worlds,
            self.spec.ppo.batch_size,
            derive_seed(self.spec.seed, &[10, it]),
            self.spec.workers,
        )?;
        let data = prepare(&batch, &self.spec.ppo)?;
        let stats = ppo_update(
            &self.model,
            &mut self.store,
            &self.adam,
            &data,
            &self.spec.ppo,
            derive_seed(self.spec.seed, &[11, it]),
        )?;
        self.iteration += 1;
        self.env_steps_total += batch.steps();
        let row = MetricsRow {
            iteration: self.iteration,
            env_steps_total: self.env_steps_total,
            mean_return: batch.mean_return(),
            success_rate: batch.success_rate(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            wallclock_s: if self.spec.record_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.last_batch = Some(batch);
        Ok(row)
    }

    /// Dedicated evaluation episodes on a separate world instance.
    pub fn evaluate(&mut self, episodes: usize, seed: u64, greedy: bool) -> Result<EvalMetrics> {
        evaluate(
            &self.model,
            &self.store,
            self.eval_world.as_mut(),
            episodes,
            seed,
            greedy,
        )
    }
}
