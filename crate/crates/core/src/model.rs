//! Actor-critic models for every algorithm the trainer supports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, Tensor, Var};
use crate::baselines::{AmlpBaseline, CentPolicy, ConcatCritic, DecPolicy};
use crate::dicg::{AdjacencyKind, BaselineMode, DicgConfig, DicgMode, DicgNet, DicgOutput};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Integrated embeddings drive a shared policy head; concatenated critic.
    DicgCe,
    /// Local policies; the coordination graph is the centralized baseline.
    DicgDe,
    /// Local policies and a concatenated critic.
    Dec,
    /// One policy on the concatenated joint observation.
    Cent,
    /// As `DicgDe` with fixed uniform adjacency.
    DicgDeUniform,
    /// As `DicgDe` with an MLP over embeddings and attention in place of
    /// graph convolutions.
    AmlpDe,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::DicgCe,
        Algo::DicgDe,
        Algo::Dec,
        Algo::Cent,
        Algo::DicgDeUniform,
        Algo::AmlpDe,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Algo::DicgCe => "dicg_ce",
            Algo::DicgDe => "dicg_de",
            Algo::Dec => "dec",
            Algo::Cent => "cent",
            Algo::DicgDeUniform => "dicg_de_uniform",
            Algo::AmlpDe => "amlp_de",
        }
    }

    pub fn uses_encoder(self) -> bool {
        !matches!(self, Algo::Dec | Algo::Cent)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Algo::DicgCe | Algo::DicgDe | Algo::AmlpDe)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldKind {
    PredatorPrey,
    TrafficJunction,
    CoordinationGame,
}

/// Layer widths of one model. Unused fields are ignored by the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSizes {
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub gcn_layers: usize,
    /// Policy MLP (or the policy head after the integrated embeddings).
    pub policy_widths: Vec<usize>,
    /// Critic MLP; for the attention-MLP baseline, its hidden widths.
    pub critic_widths: Vec<usize>,
}

impl NetSizes {
    /// Reference architecture sizes for a world and algorithm.
    pub fn defaults(world: WorldKind, algo: Algo) -> Self {
        let sizes = |enc: &[usize], d: usize, policy: &[usize], critic: &[usize]| NetSizes {
            encoder_widths: enc.to_vec(),
            embed_dim: d,
            gcn_layers: 2,
            policy_widths: policy.to_vec(),
            critic_widths: critic.to_vec(),
        };
        match world {
            WorldKind::PredatorPrey => match algo {
                Algo::Cent => sizes(&[], 0, &[512, 128, 64], &[64, 64, 32]),
                Algo::Dec => sizes(&[], 0, &[128, 64, 32], &[64, 64, 32]),
                _ => sizes(&[128], 64, &[128, 64, 32], &[64, 64, 32]),
            },
            WorldKind::TrafficJunction => match algo {
                Algo::DicgCe => sizes(&[128], 128, &[128, 64, 32], &[64, 64, 64]),
                Algo::Cent => sizes(&[], 0, &[512, 128, 64], &[64, 64, 64]),
                Algo::Dec => sizes(&[], 0, &[256, 128, 64], &[64, 64, 64]),
                _ => sizes(&[128, 128], 128, &[256, 128, 64], &[64, 64, 64]),
            },
            WorldKind::CoordinationGame => match algo {
                Algo::Dec | Algo::Cent => sizes(&[], 0, &[16], &[16]),
                _ => sizes(&[16], 8, &[16], &[16]),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub algo: Algo,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub sizes: NetSizes,
    pub baseline: BaselineMode,
}

#[derive(Clone, Debug)]
enum Actor {
    Shared(DicgNet),
    Local(DecPolicy),
    Central(CentPolicy),
}

#[derive(Clone, Debug)]
enum Critic {
    Concat(ConcatCritic),
    Graph(DicgNet),
    Amlp(AmlpBaseline),
}

/// Policy logits (`steps·n × k`), value estimates (`steps × 1`, or
/// `steps × n` for per-agent baselines) and the coordination-graph
/// intermediates when the model has them.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub logits: Var,
    pub values: Var,
    pub dicg: Option<DicgOutput>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    actor: Actor,
    critic: Critic,
}

impl Model {
    pub fn new(store: &mut ParameterStore, spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        let s = &spec.sizes;
        let dicg = |store: &mut ParameterStore, mode, adjacency, rng: &mut _| {
            DicgNet::new(
                store,
                DicgConfig {
                    n_agents: spec.n_agents,
                    obs_dim: spec.obs_dim,
                    encoder_widths: s.encoder_widths.clone(),
                    embed_dim: s.embed_dim,
                    gcn_layers: s.gcn_layers,
                    n_actions: spec.n_actions,
                    mode,
                    head_widths: s.policy_widths.clone(),
                    baseline: spec.baseline,
                    adjacency,
                },
                rng,
            )
        };
        let joint = spec.n_agents * spec.obs_dim;
        let local = |store: &mut ParameterStore, rng: &mut _| {
            DecPolicy::new(store, "policy", spec.obs_dim, &s.policy_widths, spec.n_actions, rng)
        };
        let concat =
            |store: &mut ParameterStore, rng: &mut _| ConcatCritic::new(store, "critic", joint, &s.critic_widths, rng);
        if spec.baseline == BaselineMode::PerAgent && !matches!(spec.algo, Algo::DicgDe | Algo::DicgDeUniform) {
            return Err(Error::Model(format!(
                "per-agent baselines need a graph critic, not {}",
                spec.algo.key()
            )));
        }
        let (actor, critic) = match spec.algo {
            Algo::DicgCe => {
                let net = dicg(store, DicgMode::Ctce, AdjacencyKind::Attention, rng)?;
                (Actor::Shared(net), Critic::Concat(concat(store, rng)?))
            }
            Algo::DicgDe | Algo::DicgDeUniform => {
                let adjacency = if spec.algo == Algo::DicgDe {
                    AdjacencyKind::Attention
                } else {
                    AdjacencyKind::Uniform
                };
                let net = dicg(store, DicgMode::Ctde, adjacency, rng)?;
                (Actor::Local(local(store, rng)?), Critic::Graph(net))
            }
            Algo::AmlpDe => {
                let amlp = AmlpBaseline::new(
                    store,
                    spec.n_agents,
                    spec.obs_dim,
                    &s.encoder_widths,
                    s.embed_dim,
                    &s.critic_widths,
                    rng,
                )?;
                (Actor::Local(local(store, rng)?), Critic::Amlp(amlp))
            }
            Algo::Dec => (Actor::Local(local(store, rng)?), Critic::Concat(concat(store, rng)?)),
            Algo::Cent => {
                let p = CentPolicy::new(
                    store,
                    "policy",
                    spec.n_agents,
                    spec.obs_dim,
                    &s.policy_widths,
                    spec.n_actions,
                    rng,
                )?;
                (Actor::Central(p), Critic::Concat(concat(store, rng)?))
            }
        };
        Ok(Self { spec, actor, critic })
    }

    /// Value columns per step.
    pub fn value_width(&self) -> usize {
        match (&self.critic, self.spec.baseline) {
            (Critic::Graph(_), BaselineMode::PerAgent) => self.spec.n_agents,
            _ => 1,
        }
    }

    /// Forward pass on `steps·n` agent rows.
    pub fn forward(&self, g: &mut Graph, obs: &Tensor, alive: &[bool]) -> Result<ModelOutput> {
        let n = self.spec.n_agents;
        if obs.cols() != self.spec.obs_dim || obs.rows() != alive.len() || obs.rows() % n != 0 {
            return Err(Error::Model(format!(
                "model expects rows of {} observations in groups of {n}, got {}x{} with {} alive flags",
                self.spec.obs_dim,
                obs.rows(),
                obs.cols(),
                alive.len()
            )));
        }
        let steps = obs.rows() / n;
        let x = g.constant(obs.clone());
        let joint = g.constant(obs.clone().reshaped(steps, n * self.spec.obs_dim)?);

        let mut dicg = None;
        let logits = match &self.actor {
            Actor::Shared(net) => {
                let out = net.forward_var(g, x, alive, n)?;
                dicg = Some(out);
                net.ctce_logits(g, out.integrated, alive)?
            }
            Actor::Local(p) => p.forward(g, x, alive)?,
            Actor::Central(p) => p.forward(g, joint, alive)?,
        };
        let values = match &self.critic {
            Critic::Concat(c) => c.forward(g, joint)?,
            Critic::Graph(net) => {
                let out = net.forward_var(g, x, alive, n)?;
                dicg = Some(out);
                net.baseline(g, out.integrated, alive, n)?
            }
            Critic::Amlp(a) => {
                let (e0, m) = a.embed(g, x, alive)?;
                a.baseline(g, e0, m)?
            }
        };
        Ok(ModelOutput { logits, values, dicg })
    }
}
