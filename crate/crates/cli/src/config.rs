//! Run configuration files.
//!
//! A config names a world and an algorithm; every other key is optional and
//! defaults to the reference settings for that pair. Parsing happens in two
//! passes so that errors carry a line or key: the text is first read as a
//! plain table to check required keys, then into a shape where every
//! optional key is an `Option`.

use std::path::{Path, PathBuf};

use dicg_core::dicg::BaselineMode;
use dicg_core::model::{Algo, NetSizes, WorldKind};
use dicg_core::trainer::{PpoConfig, RunSpec};
use dicg_core::worlds::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Fully resolved algorithm section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    pub kind: Algo,
    pub baseline: BaselineMode,
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub gcn_layers: usize,
    pub policy_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
}

impl AlgoSection {
    pub fn defaults(world: WorldKind, kind: Algo) -> Self {
        let s = NetSizes::defaults(world, kind);
        Self {
            kind,
            baseline: BaselineMode::Mean,
            encoder_widths: s.encoder_widths,
            embed_dim: s.embed_dim,
            gcn_layers: s.gcn_layers,
            policy_widths: s.policy_widths,
            critic_widths: s.critic_widths,
        }
    }

    pub fn sizes(&self) -> NetSizes {
        NetSizes {
            encoder_widths: self.encoder_widths.clone(),
            embed_dim: self.embed_dim,
            gcn_layers: self.gcn_layers,
            policy_widths: self.policy_widths.clone(),
            critic_widths: self.critic_widths.clone(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub out: PathBuf,
    /// World instances stepped together during collection.
    pub n_envs: usize,
    pub workers: usize,
    /// Greedy episodes per periodic evaluation.
    pub eval_episodes: usize,
    pub record_wallclock: bool,
    pub world: WorldConfig,
    pub algo: AlgoSection,
    pub ppo: PpoConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
    n_envs: Option<usize>,
    workers: Option<usize>,
    eval_episodes: Option<usize>,
    record_wallclock: Option<bool>,
    world: WorldConfig,
    algo: RawAlgo,
    ppo: Option<RawPpo>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgo {
    kind: Algo,
    baseline: Option<BaselineMode>,
    encoder_widths: Option<Vec<usize>>,
    embed_dim: Option<usize>,
    gcn_layers: Option<usize>,
    policy_widths: Option<Vec<usize>>,
    critic_widths: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPpo {
    clip: Option<f64>,
    lr: Option<f64>,
    gamma: Option<f64>,
    lambda: Option<f64>,
    entropy_coef: Option<f64>,
    value_coef: Option<f64>,
    epochs: Option<usize>,
    minibatches: Option<usize>,
    batch_size: Option<usize>,
    max_grad_norm: Option<f64>,
    normalize_advantages: Option<bool>,
}

pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_EVAL_EPISODES: usize = 20;
/// Largest seed a config can hold: TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn require(table: &toml::Table, section: &str, key: &str) -> Result<(), CliError> {
    let present = table
        .get(section)
        .and_then(|v| v.as_table())
        .is_some_and(|t| t.contains_key(key));
    if present {
        Ok(())
    } else {
        Err(CliError::Config(format!("missing required key `{section}.{key}`")))
    }
}

impl RunConfig {
    /// Reference configuration for a world and algorithm.
    pub fn defaults(world: WorldConfig, kind: Algo) -> Self {
        let algo = AlgoSection::defaults(WorldKind::from(&world), kind);
        Self {
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            out: PathBuf::from(format!("runs/{}_{}", world.name(), kind.key())),
            n_envs: 8,
            workers: 1,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            record_wallclock: false,
            ppo: PpoConfig::defaults(&world),
            world,
            algo,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        require(&table, "world", "name")?;
        require(&table, "algo", "kind")?;
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;

        let mut c = Self::defaults(raw.world, raw.algo.kind);
        macro_rules! take {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        take!(c.seed, raw.seed);
        take!(c.iterations, raw.iterations);
        take!(c.out, raw.out);
        take!(c.n_envs, raw.n_envs);
        take!(c.workers, raw.workers);
        take!(c.eval_episodes, raw.eval_episodes);
        take!(c.record_wallclock, raw.record_wallclock);
        let a = raw.algo;
        take!(c.algo.baseline, a.baseline);
        take!(c.algo.encoder_widths, a.encoder_widths);
        take!(c.algo.embed_dim, a.embed_dim);
        take!(c.algo.gcn_layers, a.gcn_layers);
        take!(c.algo.policy_widths, a.policy_widths);
        take!(c.algo.critic_widths, a.critic_widths);
        if let Some(p) = raw.ppo {
            take!(c.ppo.clip, p.clip);
            take!(c.ppo.lr, p.lr);
            take!(c.ppo.gamma, p.gamma);
            take!(c.ppo.lambda, p.lambda);
            take!(c.ppo.entropy_coef, p.entropy_coef);
            take!(c.ppo.value_coef, p.value_coef);
            take!(c.ppo.epochs, p.epochs);
            take!(c.ppo.minibatches, p.minibatches);
            take!(c.ppo.batch_size, p.batch_size);
            take!(c.ppo.max_grad_norm, p.max_grad_norm);
            take!(c.ppo.normalize_advantages, p.normalize_advantages);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks world and PPO settings and that the model can be built.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > MAX_SEED {
            return Err(CliError::Config(format!(
                "seed {} exceeds the maximum {MAX_SEED}",
                self.seed
            )));
        }
        self.world
            .validate()
            .map_err(|e| CliError::Config(format!("world: {e}")))?;
        self.ppo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.n_envs == 0 {
            return Err(CliError::Config("n_envs must be at least 1".into()));
        }
        let world = self
            .world
            .build()
            .map_err(|e| CliError::Config(format!("world: {e}")))?;
        dicg_core::trainer::build_model(&self.run_spec(), world.as_ref())
            .map_err(|e| CliError::Config(format!("algo: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            world: self.world.clone(),
            algo: self.algo.kind,
            sizes: self.algo.sizes(),
            baseline: self.algo.baseline,
            ppo: self.ppo.clone(),
            seed: self.seed,
            n_envs: self.n_envs,
            workers: self.workers.max(1),
            record_wallclock: self.record_wallclock,
        }
    }
}
