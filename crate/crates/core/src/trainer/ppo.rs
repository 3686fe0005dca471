//! Clipped surrogate loss and the minibatch update loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gae::{gae_advantages, normalize};
use super::rollout::TrajectoryBatch;
use super::PpoConfig;
use crate::autodiff::{Adam, Gradients, Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Model;

/// Agent rows processed per tape; larger minibatches are split and their
/// gradients summed.
const CHUNK_ROWS: usize = 4096;

/// A batch flattened across segments with advantages and returns attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub value_width: usize,
    /// `steps·n × obs_dim`, row-major.
    pub obs: Vec<f64>,
    pub alive: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Per agent row: the team advantage of its step (or its own column
    /// for per-agent baselines). Zero for dead rows.
    pub advantages: Vec<f64>,
    /// `steps × value_width`.
    pub returns: Vec<f64>,
    /// Which return entries enter the value loss.
    pub value_mask: Vec<bool>,
}

impl Prepared {
    pub fn steps(&self) -> usize {
        self.returns.len() / self.value_width.max(1)
    }
}

/// Runs GAE per segment and value column and, if configured, normalizes
/// advantages over alive agent rows.
pub fn prepare(batch: &TrajectoryBatch, config: &PpoConfig) -> Result<Prepared> {
    let n = batch.n_agents;
    let vw = batch.value_width;
    let mut p = Prepared {
        n_agents: n,
        obs_dim: batch.obs_dim,
        value_width: vw,
        obs: Vec::new(),
        alive: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
        value_mask: Vec::new(),
    };
    for seg in &batch.segments {
        let t = seg.len();
        let mut adv = vec![0.0; t * vw];
        let mut ret = vec![0.0; t * vw];
        for c in 0..vw {
            let values: Vec<f64> = (0..t).map(|s| seg.values[s * vw + c]).collect();
            let (a, r) = gae_advantages(
                &seg.rewards,
                &values,
                &seg.terminals,
                seg.bootstrap[c],
                config.gamma,
                config.lambda,
            )?;
            for s in 0..t {
                adv[s * vw + c] = a[s];
                ret[s * vw + c] = r[s];
            }
        }
        for s in 0..t {
            for i in 0..n {
                let alive = seg.alive[s * n + i];
                let col = if vw == 1 { 0 } else { i };
                p.advantages.push(if alive { adv[s * vw + col] } else { 0.0 });
            }
            for c in 0..vw {
                p.value_mask.push(if vw == 1 { true } else { seg.alive[s * n + c] });
            }
        }
        p.obs.extend_from_slice(&seg.obs);
        p.alive.extend_from_slice(&seg.alive);
        p.actions.extend_from_slice(&seg.actions);
        p.log_probs.extend_from_slice(&seg.log_probs);
        p.returns.extend(ret);
    }
    if config.normalize_advantages {
        normalize(&mut p.advantages, &p.alive);
    }
    Ok(p)
}

/// Loss components on one group of steps. `loss` already carries the
/// minibatch-wide normalizers, so losses of disjoint chunks add up.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    /// Σ clipped surrogate / alive rows.
    pub surrogate: f64,
    pub entropy: f64,
    pub value_loss: f64,
    /// Σ (logπ_old − logπ_new) / alive rows.
    pub approx_kl: f64,
}

/// Normalizers shared by all chunks of one minibatch.
#[derive(Clone, Copy, Debug)]
pub struct Normalizers {
    pub alive_rows: usize,
    pub value_entries: usize,
}

impl Normalizers {
    pub fn for_steps(data: &Prepared, steps: &[usize]) -> Self {
        let n = data.n_agents;
        let vw = data.value_width;
        Self {
            alive_rows: steps
                .iter()
                .map(|&s| data.alive[s * n..(s + 1) * n].iter().filter(|&&a| a).count())
                .sum(),
            value_entries: steps
                .iter()
                .map(|&s| data.value_mask[s * vw..(s + 1) * vw].iter().filter(|&&a| a).count())
                .sum(),
        }
    }
}

/// `−surrogate − entropy_coef·entropy + value_coef·value_loss` on `steps`,
/// where the surrogate is the mean over alive agent rows of
/// `min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)` with `ρ = exp(logπ − logπ_old)`.
pub fn ppo_loss(
    g: &mut Graph,
    model: &Model,
    data: &Prepared,
    steps: &[usize],
    config: &PpoConfig,
    norm: Normalizers,
) -> Result<LossParts> {
    let n = data.n_agents;
    let od = data.obs_dim;
    let vw = data.value_width;
    let rows = steps.len() * n;
    let mut obs = Vec::with_capacity(rows * od);
    let mut alive = Vec::with_capacity(rows);
    let mut actions = Vec::with_capacity(rows);
    let mut old = Vec::with_capacity(rows);
    let mut adv = Vec::with_capacity(rows);
    let mut returns = Vec::with_capacity(steps.len() * vw);
    let mut vmask = Vec::with_capacity(steps.len() * vw);
    for &s in steps {
        obs.extend_from_slice(&data.obs[s * n * od..(s + 1) * n * od]);
        let r = s * n..(s + 1) * n;
        alive.extend_from_slice(&data.alive[r.clone()]);
        actions.extend(
            data.actions[r.clone()]
                .iter()
                .zip(&data.alive[r.clone()])
                .map(|(&a, &l)| l.then_some(a)),
        );
        old.extend_from_slice(&data.log_probs[r.clone()]);
        adv.extend_from_slice(&data.advantages[r]);
        returns.extend_from_slice(&data.returns[s * vw..(s + 1) * vw]);
        vmask.extend_from_slice(&data.value_mask[s * vw..(s + 1) * vw]);
    }
    let obs = Tensor::new(rows, od, obs)?;
    let out = model.forward(g, &obs, &alive)?;

    let logp = g.log_prob(out.logits, &actions)?;
    let bad = g.value(logp).data().iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFinite(format!("{bad} of {rows} new log-probabilities")));
    }
    let old_v = g.constant(Tensor::column(&old));
    let diff = g.sub(logp, old_v)?;
    let ratio = g.exp(diff);
    if let Some(r) = g.value(ratio).data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "probability ratio at row {r}: logπ_new = {}, logπ_old = {}",
            g.value(logp).data()[r],
            old[r]
        )));
    }
    let adv_v = g.constant(Tensor::column(&adv));
    let unclipped = g.mul(ratio, adv_v)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let clipped = g.mul(clipped, adv_v)?;
    let surr = g.minimum(unclipped, clipped)?;

    let inv_alive = 1.0 / norm.alive_rows.max(1) as f64;
    let row_w = Tensor::column(
        &alive
            .iter()
            .map(|&a| if a { inv_alive } else { 0.0 })
            .collect::<Vec<_>>(),
    );
    let surrogate = g.weighted_sum(surr, row_w.clone())?;
    let ent = g.entropy(out.logits, &alive)?;
    let entropy = g.weighted_sum(ent, row_w)?;

    let ret_v = g.constant(Tensor::new(steps.len(), vw, returns)?);
    let err = g.sub(out.values, ret_v)?;
    let sq = g.mul(err, err)?;
    let inv_v = 1.0 / norm.value_entries.max(1) as f64;
    let vw_t = Tensor::new(
        steps.len(),
        vw,
        vmask.iter().map(|&m| if m { inv_v } else { 0.0 }).collect(),
    )?;
    let value_loss = g.weighted_sum(sq, vw_t)?;

    let a = g.scale(surrogate, -1.0);
    let b = g.scale(entropy, -config.entropy_coef);
    let c = g.scale(value_loss, config.value_coef);
    let ab = g.add(a, b)?;
    let loss = g.add(ab, c)?;

    let kl: f64 = g
        .value(logp)
        .data()
        .iter()
        .zip(&old)
        .zip(&alive)
        .filter(|(_, &l)| l)
        .map(|((new, old), _)| old - new)
        .sum::<f64>()
        * inv_alive;
    Ok(LossParts {
        loss,
        surrogate: g.value(surrogate).get(0, 0),
        entropy: g.value(entropy).get(0, 0),
        value_loss: g.value(value_loss).get(0, 0),
        approx_kl: kl,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

/// `epochs × minibatches` optimizer steps over shuffled steps. Reported
/// statistics are means over all minibatches, each measured before its
/// own optimizer step.
pub fn ppo_update(
    model: &Model,
    store: &mut ParameterStore,
    adam: &Adam,
    data: &Prepared,
    config: &PpoConfig,
    seed: u64,
) -> Result<UpdateStats> {
    let total = data.steps();
    let mut stats = UpdateStats::default();
    if total == 0 {
        return Ok(stats);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    let minibatches = config.minibatches.clamp(1, total);
    let chunk_steps = (CHUNK_ROWS / data.n_agents.max(1)).max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for mb in 0..minibatches {
            let lo = mb * total / minibatches;
            let hi = (mb + 1) * total / minibatches;
            let steps = &order[lo..hi];
            if steps.is_empty() {
                continue;
            }
            let norm = Normalizers::for_steps(data, steps);
            let mut grads = Gradients::zeros_like(store);
            for chunk in steps.chunks(chunk_steps) {
                let mut g = Graph::new(store);
                let parts = ppo_loss(&mut g, model, data, chunk, config, norm)?;
                grads.accumulate(g.backward(parts.loss)?);
                stats.policy_loss -= parts.surrogate;
                stats.entropy += parts.entropy;
                stats.value_loss += parts.value_loss;
                stats.approx_kl += parts.approx_kl;
            }
            let norm = grads.clip_global_norm(config.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite("gradient norm".into()));
            }
            stats.grad_norm += norm;
            adam.step(store, &grads)?;
            stats.updates += 1;
        }
    }
    let u = stats.updates.max(1) as f64;
    stats.policy_loss /= u;
    stats.entropy /= u;
    stats.value_loss /= u;
    stats.approx_kl /= u;
    stats.grad_norm /= u;
    Ok(stats)
}
