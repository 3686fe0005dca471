//! Embedding probes on trained checkpoints: how attention falls off with
//! grid distance, and how much of a teammate's action the embeddings
//! encode before and after graph integration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Algo, Model};
use crate::nn::{Activation, Mlp};
use crate::trainer::{argmax, derive_seed, sample, stack};
use crate::worlds::World;

/// One adjacency row: agent `i`'s attention to every alive agent `j` at one
/// step, tagged with their grid distance (`i = j` has distance 0).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub entries: Vec<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionBucket {
    pub distance: usize,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Attention rows gathered by [`attention_rows`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionRecord {
    pub rows: Vec<AttentionRow>,
}

impl AttentionRecord {
    /// Mean and standard error of attention weight per integer distance.
    pub fn buckets(&self) -> Vec<AttentionBucket> {
        let mut by_distance: Vec<Vec<f64>> = Vec::new();
        for (d, w) in self.rows.iter().flat_map(|r| r.entries.iter().copied()) {
            if by_distance.len() <= d {
                by_distance.resize_with(d + 1, Vec::new);
            }
            by_distance[d].push(w);
        }
        by_distance
            .iter()
            .enumerate()
            .filter(|(_, ws)| !ws.is_empty())
            .map(|(distance, ws)| {
                let n = ws.len() as f64;
                let mean = ws.iter().sum::<f64>() / n;
                let stderr = if ws.len() > 1 {
                    (ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
                } else {
                    0.0
                };
                AttentionBucket {
                    distance,
                    count: ws.len(),
                    mean,
                    stderr,
                }
            })
            .collect()
    }

    /// Average over rows of the attention mass on agents at least
    /// `min_distance` away.
    pub fn far_mass(&self, min_distance: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .rows
            .iter()
            .map(|r| {
                r.entries
                    .iter()
                    .filter(|(d, _)| *d >= min_distance)
                    .map(|(_, w)| w)
                    .sum::<f64>()
            })
            .sum();
        total / self.rows.len() as f64
    }
}

fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Per-step coordination-graph quantities for one rollout.
struct Recorded {
    obs_alive: Vec<bool>,
    actions: Vec<usize>,
    adjacency: Tensor,
    embeddings: Tensor,
    integrated: Tensor,
    positions: Option<Vec<(usize, usize)>>,
}

/// Rolls out `episodes` episodes, sampled or greedy, and hands every step
/// to `visit`.
fn roll(
    model: &Model,
    store: &ParameterStore,
    world: &mut dyn World,
    episodes: usize,
    seed: u64,
    greedy: bool,
    mut visit: impl FnMut(Recorded),
) -> Result<()> {
    if !matches!(model.spec.algo, Algo::DicgCe | Algo::DicgDe | Algo::DicgDeUniform) {
        return Err(Error::Probe(format!(
            "{} has no coordination graph to probe",
            model.spec.algo.key()
        )));
    }
    let idle = world.idle_action();
    for ep in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4, ep as u64]));
        let mut obs = world.reset(derive_seed(seed, &[3, ep as u64]));
        loop {
            let positions = world.agent_positions();
            let (x, alive) = stack(&[&obs], model.spec.obs_dim);
            let mut g = Graph::new(store);
            let out = model.forward(&mut g, &x, &alive)?;
            let dicg = out
                .dicg
                .ok_or_else(|| Error::Probe("model produced no coordination graph".into()))?;
            let logits = g.value(out.logits);
            let actions: Vec<usize> = (0..alive.len())
                .map(|r| match (alive[r], greedy) {
                    (false, _) => idle,
                    (true, true) => argmax(logits.row(r)),
                    (true, false) => sample(logits.row(r), &mut rng),
                })
                .collect();
            let step = world.step(&actions)?;
            visit(Recorded {
                obs_alive: alive,
                actions,
                adjacency: g.value(dicg.adjacency).clone(),
                embeddings: g.value(dicg.embeddings).clone(),
                integrated: g.value(dicg.integrated).clone(),
                positions,
            });
            if step.done {
                break;
            }
            obs = step.obs;
        }
    }
    Ok(())
}

/// Collects attention rows with grid distances. The world must report agent
/// positions.
pub fn attention_rows(
    model: &Model,
    store: &ParameterStore,
    world: &mut dyn World,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<AttentionRecord> {
    world.reset(0);
    if world.agent_positions().is_none() {
        return Err(Error::Probe(
            "the attention probe needs a world with agent positions".into(),
        ));
    }
    let mut record = AttentionRecord::default();
    roll(model, store, world, episodes, seed, greedy, |r| {
        let pos = r.positions.as_ref().expect("positions checked above");
        let n = r.obs_alive.len();
        for i in (0..n).filter(|&i| r.obs_alive[i]) {
            let entries = (0..n)
                .filter(|&j| r.obs_alive[j])
                .map(|j| (manhattan(pos[i], pos[j]), r.adjacency.get(i, j)))
                .collect();
            record.rows.push(AttentionRow { entries });
        }
    })?;
    Ok(record)
}

/// Embeddings before (`E⁽⁰⁾`) and after (`Ẽ`) graph integration with the
/// actions taken alongside them, `steps·n` rows each.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub n_agents: usize,
    pub n_actions: usize,
    pub pre: Tensor,
    pub post: Tensor,
    pub actions: Vec<usize>,
    pub alive: Vec<bool>,
}

pub fn collect_embeddings(
    model: &Model,
    store: &ParameterStore,
    world: &mut dyn World,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<ProbeDataset> {
    let (mut pre, mut post, mut actions, mut alive) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dim = 0;
    roll(model, store, world, episodes, seed, greedy, |r| {
        dim = r.embeddings.cols();
        pre.extend_from_slice(r.embeddings.data());
        post.extend_from_slice(r.integrated.data());
        actions.extend(r.actions);
        alive.extend(r.obs_alive);
    })?;
    let rows = alive.len();
    Ok(ProbeDataset {
        n_agents: model.spec.n_agents,
        n_actions: model.spec.n_actions,
        pre: Tensor::new(rows, dim, pre)?,
        post: Tensor::new(rows, dim, post)?,
        actions,
        alive,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub pairs: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Fraction of samples used for training; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            pairs: 5,
            epochs: 50,
            hidden: 64,
            lr: 1e-3,
            minibatch: 64,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Fewest joint samples of a pair accepted for the split.
pub const MIN_PROBE_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub pair: usize,
    pub i: usize,
    pub j: usize,
    pub samples: usize,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
}

/// For `settings.pairs` distinct ordered pairs `(i, j)`, trains one
/// classifier from `e_i` and one from `ẽ_i` to agent `j`'s action and
/// reports held-out accuracy of both.
pub fn action_prediction(data: &ProbeDataset, settings: &ProbeSettings) -> Result<Vec<PredictionRow>> {
    let n = data.n_agents;
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    if settings.pairs > candidates.len() {
        return Err(Error::Probe(format!(
            "{} pairs requested but {n} agents give only {}",
            settings.pairs,
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, &[0]));
    candidates.shuffle(&mut rng);
    let steps = data.alive.len() / n.max(1);
    candidates
        .iter()
        .take(settings.pairs)
        .enumerate()
        .map(|(pair, &(i, j))| {
            let rows: Vec<usize> = (0..steps).filter(|&t| data.alive[t * n + i] && data.alive[t * n + j]).collect();
            let n_train = (rows.len() as f64 * settings.train_fraction).floor() as usize;
            if rows.len() < MIN_PROBE_SAMPLES || n_train == 0 || n_train == rows.len() {
                return Err(Error::Probe(format!(
                    "pair ({i}, {j}) has {} joint samples; at least {MIN_PROBE_SAMPLES} are needed for the train/test split",
                    rows.len()
                )));
            }
            let labels: Vec<usize> = rows.iter().map(|&t| data.actions[t * n + j]).collect();
            let seed = derive_seed(settings.seed, &[1, pair as u64]);
            let pick = |src: &Tensor| {
                let d = src.cols();
                Tensor::from_fn(rows.len(), d, |r, c| src.get(rows[r] * n + i, c))
            };
            Ok(PredictionRow {
                pair,
                i,
                j,
                samples: rows.len(),
                pre_accuracy: classifier_accuracy(&pick(&data.pre), &labels, data.n_actions, n_train, settings, seed)?,
                post_accuracy: classifier_accuracy(&pick(&data.post), &labels, data.n_actions, n_train, settings, seed)?,
            })
        })
        .collect()
}

/// Trains a one-hidden-layer tanh classifier with Adam on a shuffled
/// `n_train` split and returns accuracy on the remaining rows. The same
/// `seed` gives the same split, initialization and minibatch order.
pub fn classifier_accuracy(
    x: &Tensor,
    labels: &[usize],
    k: usize,
    n_train: usize,
    settings: &ProbeSettings,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.shuffle(&mut rng);
    let (train, test) = order.split_at(n_train);
    let mut store = ParameterStore::new();
    let net = Mlp::new(
        &mut store,
        "probe",
        &[x.cols(), settings.hidden, k],
        Activation::Identity,
        &mut rng,
    )?;
    let adam = Adam::with_lr(settings.lr);
    let gather = |idx: &[usize]| {
        let xs = Tensor::from_fn(idx.len(), x.cols(), |r, c| x.get(idx[r], c));
        let ys: Vec<Option<usize>> = idx.iter().map(|&r| Some(labels[r])).collect();
        (xs, ys)
    };
    let mut train = train.to_vec();
    for _ in 0..settings.epochs {
        train.shuffle(&mut rng);
        for mb in train.chunks(settings.minibatch.max(1)) {
            let (xs, ys) = gather(mb);
            let mut g = Graph::new(&store);
            let input = g.constant(xs);
            let logits = net.forward(&mut g, input)?;
            let lp = g.log_prob(logits, &ys)?;
            let nll = g.weighted_sum(lp, Tensor::filled(mb.len(), 1, -1.0 / mb.len() as f64))?;
            let grads = g.backward(nll)?;
            adam.step(&mut store, &grads)?;
        }
    }
    let (xs, _) = gather(test);
    let mut g = Graph::new(&store);
    let input = g.constant(xs);
    let logits = net.forward(&mut g, input)?;
    let logits = g.value(logits);
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &row)| argmax(logits.row(r)) == labels[row])
        .count();
    Ok(correct as f64 / test.len() as f64)
}
