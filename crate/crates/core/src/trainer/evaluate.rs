use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::rollout::{decide, stack};
use crate::autodiff::ParameterStore;
use crate::error::Result;
use crate::model::Model;
use crate::worlds::World;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_length: f64,
}

/// Runs `episodes` full episodes without learning, either greedily (argmax)
/// or by sampling from the policy.
pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    world: &mut dyn World,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalMetrics> {
    let mut m = EvalMetrics {
        episodes,
        ..Default::default()
    };
    if episodes == 0 {
        return Ok(m);
    }
    let idle = world.idle_action();
    for ep in 0..episodes {
        let mut rng = [ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4, ep as u64]))];
        let mut obs = world.reset(derive_seed(seed, &[3, ep as u64]));
        let mut total = 0.0;
        let mut length = 0;
        loop {
            let (x, alive) = stack(&[&obs], model.spec.obs_dim);
            let rngs = if greedy { None } else { Some(&mut rng[..]) };
            let d = decide(model, store, &x, &alive, idle, rngs)?;
            let step = world.step(&d.actions)?;
            total += step.reward;
            length += 1;
            if step.done {
                break;
            }
            obs = step.obs;
        }
        m.mean_return += total;
        m.mean_length += length as f64;
        if world.success() {
            m.success_rate += 1.0;
        }
    }
    let e = episodes as f64;
    m.mean_return /= e;
    m.mean_length /= e;
    m.success_rate /= e;
    Ok(m)
}
