//! Repeated one-shot coordination game: the team earns 1 on a step only when
//! every agent picks action 0.

use serde::{Deserialize, Serialize};

use super::{check_actions, Event, EventKind, Observation, Step, World, WorldError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinationConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub episode_len: usize,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            n_actions: 2,
            episode_len: 1,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.n_agents == 0 || self.n_actions < 2 || self.episode_len == 0 {
            return Err(WorldError::Config(
                "coordination game needs agents, at least two actions and a positive length".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CoordinationGame {
    config: CoordinationConfig,
    step: usize,
    hits: usize,
}

impl CoordinationGame {
    pub fn new(config: CoordinationConfig) -> Result<Self, WorldError> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            hits: 0,
        })
    }

    fn observe(&self) -> Observation {
        // One-hot agent id plus the fraction of the episode elapsed.
        let n = self.config.n_agents;
        let d = n + 1;
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            data[i * d + i] = 1.0;
            data[i * d + n] = self.step as f64 / self.config.episode_len as f64;
        }
        Observation {
            data,
            alive: vec![true; n],
        }
    }
}

impl World for CoordinationGame {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.config.n_agents + 1
    }

    fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    fn idle_action(&self) -> usize {
        self.config.n_actions - 1
    }

    fn max_steps(&self) -> usize {
        self.config.episode_len
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.step = 0;
        self.hits = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<Step, WorldError> {
        if self.step >= self.config.episode_len {
            return Err(WorldError::Finished);
        }
        check_actions(actions, self.config.n_agents, self.config.n_actions)?;
        let t = self.step;
        let coordinated = actions.iter().all(|&a| a == 0);
        let mut events = Vec::new();
        let reward = if coordinated {
            self.hits += 1;
            events.push(Event {
                step: t,
                kind: EventKind::Coordinated,
                entities: (0..self.config.n_agents).collect(),
                reward: 1.0,
            });
            1.0
        } else {
            0.0
        };
        self.step += 1;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.step >= self.config.episode_len,
            events,
        })
    }

    fn success(&self) -> bool {
        self.hits == self.step && self.step > 0
    }
}
