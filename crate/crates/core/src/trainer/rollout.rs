//! Seeded, lockstep rollout collection over several world instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use crate::autodiff::{Graph, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::worlds::{Observation, World};

/// Contiguous steps collected from one world instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segment {
    /// `steps × n × obs_dim`, row-major.
    pub obs: Vec<f64>,
    /// `steps × n`.
    pub alive: Vec<bool>,
    /// `steps × n`; dead slots hold the world's idle action.
    pub actions: Vec<usize>,
    /// `steps × n` behaviour log-probabilities; zero for dead slots.
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// True on the last step of an episode, including time-limit ends.
    pub terminals: Vec<bool>,
    /// `steps × value_width` critic outputs at collection time.
    pub values: Vec<f64>,
    /// Critic output after the last step; zero if that step was terminal.
    pub bootstrap: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub total_return: f64,
    pub length: usize,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub value_width: usize,
    pub segments: Vec<Segment>,
    /// Episodes that finished inside the batch, in world order.
    pub episodes: Vec<EpisodeStats>,
}

impl TrajectoryBatch {
    pub fn steps(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.steps() == 0
    }

    /// Mean return of finished episodes; if none finished, the mean
    /// reward sum of the segments.
    pub fn mean_return(&self) -> f64 {
        if !self.episodes.is_empty() {
            return self.episodes.iter().map(|e| e.total_return).sum::<f64>() / self.episodes.len() as f64;
        }
        let live: Vec<f64> = self
            .segments
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.rewards.iter().sum())
            .collect();
        if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        }
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }
}

/// Draws from the categorical distribution with the given logits.
pub(crate) fn sample(logits: &[f64], rng: &mut impl Rng) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (a, w) in weights.iter().enumerate() {
        if u < *w {
            return a;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Index of the largest logit, lowest index on ties.
pub(crate) fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (a, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = a;
        }
    }
    best
}

/// Stacks joint observations into `(worlds·n) × obs_dim` rows.
pub(crate) fn stack(observations: &[&Observation], obs_dim: usize) -> (Tensor, Vec<bool>) {
    let data: Vec<f64> = observations.iter().flat_map(|o| o.data.iter().copied()).collect();
    let alive: Vec<bool> = observations.iter().flat_map(|o| o.alive.iter().copied()).collect();
    let rows = alive.len();
    (Tensor::new(rows, obs_dim, data).expect("observation rows"), alive)
}

/// Chosen actions with their log-probabilities.
pub(crate) struct Decision {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Tensor,
}

/// Runs the model on stacked observations and picks one action per alive
/// row (sampled from `rngs[w]` for world `w`, or greedy).
pub(crate) fn decide(
    model: &Model,
    store: &ParameterStore,
    obs: &Tensor,
    alive: &[bool],
    idle: usize,
    rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<Decision> {
    let n = model.spec.n_agents;
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, obs, alive)?;
    let logits = g.value(out.logits).clone();
    if !logits.all_finite() {
        return Err(Error::NonFinite("policy logits during rollout".into()));
    }
    let mut actions = vec![idle; alive.len()];
    match rngs {
        Some(rngs) => {
            for (r, a) in actions.iter_mut().enumerate() {
                if alive[r] {
                    *a = sample(logits.row(r), &mut rngs[r / n]);
                }
            }
        }
        None => {
            for (r, a) in actions.iter_mut().enumerate() {
                if alive[r] {
                    *a = argmax(logits.row(r));
                }
            }
        }
    }
    let chosen: Vec<Option<usize>> = actions.iter().zip(alive).map(|(&a, &l)| l.then_some(a)).collect();
    let lp = g.log_prob(out.logits, &chosen)?;
    Ok(Decision {
        log_probs: g.value(lp).data().to_vec(),
        values: g.value(out.values).clone(),
        actions,
    })
}

/// Seed of episode `episode` of world `world`.
pub(crate) fn episode_seed(seed: u64, world: usize, episode: usize) -> u64 {
    derive_seed(seed, &[1, world as u64, episode as u64])
}

fn action_rng(seed: u64, world: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, world as u64]))
}

/// Lockstep collection for a contiguous group of worlds; `first` is the
/// global index of `worlds[0]`.
fn collect_group(
    model: &Model,
    store: &ParameterStore,
    worlds: &mut [Box<dyn World>],
    first: usize,
    steps: usize,
    seed: u64,
) -> Result<(Vec<Segment>, Vec<Vec<EpisodeStats>>)> {
    let n = model.spec.n_agents;
    let od = model.spec.obs_dim;
    let vw = model.value_width();
    let k = worlds.len();
    let mut segments = vec![Segment::default(); k];
    let mut episodes: Vec<Vec<EpisodeStats>> = vec![Vec::new(); k];
    if k == 0 || steps == 0 {
        return Ok((segments, episodes));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|w| action_rng(seed, first + w)).collect();
    let mut episode_index = vec![0usize; k];
    let mut running = vec![(0.0f64, 0usize); k];
    let mut current: Vec<Observation> = worlds
        .iter_mut()
        .enumerate()
        .map(|(w, world)| world.reset(episode_seed(seed, first + w, 0)))
        .collect();
    let idle = worlds[0].idle_action();

    for _ in 0..steps {
        let refs: Vec<&Observation> = current.iter().collect();
        let (obs, alive) = stack(&refs, od);
        let d = decide(model, store, &obs, &alive, idle, Some(&mut rngs))?;
        for w in 0..k {
            let rows = w * n..(w + 1) * n;
            let seg = &mut segments[w];
            seg.obs.extend_from_slice(&current[w].data);
            seg.alive.extend_from_slice(&current[w].alive);
            seg.actions.extend_from_slice(&d.actions[rows.clone()]);
            seg.log_probs.extend_from_slice(&d.log_probs[rows]);
            seg.values.extend_from_slice(d.values.row(w));
            let step = worlds[w].step(&d.actions[w * n..(w + 1) * n])?;
            seg.rewards.push(step.reward);
            seg.terminals.push(step.done);
            running[w].0 += step.reward;
            running[w].1 += 1;
            if step.done {
                episodes[w].push(EpisodeStats {
                    total_return: running[w].0,
                    length: running[w].1,
                    success: worlds[w].success(),
                });
                running[w] = (0.0, 0);
                episode_index[w] += 1;
                current[w] = worlds[w].reset(episode_seed(seed, first + w, episode_index[w]));
            } else {
                current[w] = step.obs;
            }
        }
    }

    let open: Vec<usize> = (0..k)
        .filter(|&w| !segments[w].terminals.last().copied().unwrap_or(true))
        .collect();
    for w in 0..k {
        segments[w].bootstrap = vec![0.0; vw];
    }
    if !open.is_empty() {
        let refs: Vec<&Observation> = open.iter().map(|&w| &current[w]).collect();
        let (obs, alive) = stack(&refs, od);
        let mut g = Graph::new(store);
        let out = model.forward(&mut g, &obs, &alive)?;
        let values = g.value(out.values);
        for (i, &w) in open.iter().enumerate() {
            segments[w].bootstrap = values.row(i).to_vec();
        }
    }
    Ok((segments, episodes))
}

/// Collects at least `batch_size` environment steps, split evenly over the
/// worlds (each restarts from a fresh episode). With `workers > 1` the
/// worlds are divided into contiguous groups processed on separate threads;
/// results do not depend on `workers`.
pub fn collect_rollouts(
    model: &Model,
    store: &ParameterStore,
    worlds: &mut [Box<dyn World>],
    batch_size: usize,
    seed: u64,
    workers: usize,
) -> Result<TrajectoryBatch> {
    let mut batch = TrajectoryBatch {
        n_agents: model.spec.n_agents,
        obs_dim: model.spec.obs_dim,
        value_width: model.value_width(),
        segments: Vec::new(),
        episodes: Vec::new(),
    };
    if batch_size == 0 || worlds.is_empty() {
        return Ok(batch);
    }
    for w in worlds.iter() {
        if w.n_agents() != model.spec.n_agents
            || w.obs_dim() != model.spec.obs_dim
            || w.n_actions() != model.spec.n_actions
        {
            return Err(Error::Model("world and model dimensions disagree".into()));
        }
    }
    let used = worlds.len().min(batch_size);
    let steps = batch_size.div_ceil(used);
    let worlds = &mut worlds[..used];
    let workers = workers.clamp(1, used);
    let per = used.div_ceil(workers);

    let results: Vec<Result<(Vec<Segment>, Vec<Vec<EpisodeStats>>)>> = if workers == 1 {
        vec![collect_group(model, store, worlds, 0, steps, seed)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = worlds
                .chunks_mut(per)
                .enumerate()
                .map(|(c, group)| scope.spawn(move || collect_group(model, store, group, c * per, steps, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Model("rollout worker panicked".into())))
                })
                .collect()
        })
    };
    for r in results {
        let (segments, episodes) = r?;
        batch.segments.extend(segments);
        batch.episodes.extend(episodes.into_iter().flatten());
    }
    Ok(batch)
}
