//! Seeded multi-agent environments with a shared team reward.

mod coordination;
mod predator_prey;
mod traffic_junction;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use coordination::{CoordinationConfig, CoordinationGame};
pub use predator_prey::{prey_moves, Action as PredatorAction, CaptureRange, Pos, PredatorPrey, PredatorPreyConfig};
pub use traffic_junction::{Car, Difficulty, Layout, TrafficJunction, TrafficJunctionConfig, BRAKE, GAS};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("agent {agent}: action {action} is not one of 0..{choices}")]
    InvalidAction {
        agent: usize,
        action: usize,
        choices: usize,
    },
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("step called on a finished episode")]
    Finished,
}

/// Joint observation: `n_agents × obs_dim` row-major plus alive flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub data: Vec<f64>,
    pub alive: Vec<bool>,
}

impl Observation {
    pub fn row(&self, agent: usize) -> &[f64] {
        let d = self.data.len() / self.alive.len().max(1);
        &self.data[agent * d..(agent + 1) * d]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Capture,
    SoloAttempt,
    StepCost,
    Collision,
    Congestion,
    Spawn,
    Exit,
    IgnoredAction,
    Coordinated,
}

/// One reward-relevant occurrence, exportable as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub kind: EventKind,
    pub entities: Vec<usize>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
}

pub trait World: Send {
    /// Agent slots; fixed for the lifetime of the world.
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Action recorded for dead slots.
    fn idle_action(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, actions: &[usize]) -> Result<Step, WorldError>;
    /// Whether the episode so far counts as a success.
    fn success(&self) -> bool;
    /// Grid cell of each agent slot when meaningful.
    fn agent_positions(&self) -> Option<Vec<(usize, usize)>> {
        None
    }
}

/// World selection as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum WorldConfig {
    PredatorPrey(PredatorPreyConfig),
    TrafficJunction(TrafficJunctionConfig),
    CoordinationGame(CoordinationConfig),
}

impl WorldConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PredatorPrey(_) => "predator_prey",
            Self::TrafficJunction(_) => "traffic_junction",
            Self::CoordinationGame(_) => "coordination_game",
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        match self {
            Self::PredatorPrey(c) => c.validate(),
            Self::TrafficJunction(c) => c.validate(),
            Self::CoordinationGame(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn World>, WorldError> {
        self.validate()?;
        Ok(match self {
            Self::PredatorPrey(c) => Box::new(PredatorPrey::new(c.clone())?),
            Self::TrafficJunction(c) => Box::new(TrafficJunction::new(c.clone())?),
            Self::CoordinationGame(c) => Box::new(CoordinationGame::new(c.clone())?),
        })
    }
}

/// Writes events as line-delimited JSON records.
pub fn write_event_log<W: Write>(mut w: W, events: &[Event]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub(crate) fn check_actions(actions: &[usize], n: usize, choices: usize) -> Result<(), WorldError> {
    if actions.len() != n {
        return Err(WorldError::ActionCount {
            expected: n,
            found: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= choices) {
        return Err(WorldError::InvalidAction { agent, action, choices });
    }
    Ok(())
}
