//! Grid predator-prey with a solo-attempt penalty.
//!
//! Predators are the controlled agents. Each step: predators move
//! simultaneously, prey move by a seeded escape rule, then every alive prey
//! with two or more predators in capture range is captured (+capture
//! reward) while a prey with exactly one predator in range costs the team
//! the penalty `p`. A fixed step cost is charged once per team step.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, Event, EventKind, Observation, Step, World, WorldError};

/// `(row, col)` grid cell.
pub type Pos = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureRange {
    /// The 8 surrounding cells.
    Moore,
    /// The 4 orthogonal neighbours.
    VonNeumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredatorPreyConfig {
    pub grid_size: usize,
    pub n_predators: usize,
    pub n_prey: usize,
    /// Solo-attempt penalty `p`, must be ≤ 0.
    pub penalty: f64,
    pub capture_reward: f64,
    pub step_cost: f64,
    pub max_steps: usize,
    /// Field of view is a `(2r+1) × (2r+1)` window.
    pub view_radius: usize,
    pub capture_range: CaptureRange,
    pub prey_stay_prob: f64,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            n_predators: 8,
            n_prey: 8,
            penalty: -1.0,
            capture_reward: 10.0,
            step_cost: -0.1,
            max_steps: 200,
            view_radius: 2,
            capture_range: CaptureRange::Moore,
            prey_stay_prob: 0.2,
        }
    }
}

impl PredatorPreyConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.penalty > 0.0 {
            return Err(WorldError::Config(format!(
                "penalty must be <= 0, got {}",
                self.penalty
            )));
        }
        if self.n_predators == 0 || self.grid_size == 0 {
            return Err(WorldError::Config(
                "need a non-empty grid and at least one predator".into(),
            ));
        }
        if self.n_predators + self.n_prey > self.grid_size * self.grid_size {
            return Err(WorldError::Config(format!(
                "{} entities do not fit a {}x{} grid",
                self.n_predators + self.n_prey,
                self.grid_size,
                self.grid_size
            )));
        }
        if !(0.0..=1.0).contains(&self.prey_stay_prob) {
            return Err(WorldError::Config("prey_stay_prob must be in [0, 1]".into()));
        }
        if self.max_steps == 0 {
            return Err(WorldError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        2 * self.view_radius + 1
    }

    pub fn obs_dim(&self) -> usize {
        2 + 2 * self.window() * self.window()
    }
}

#[derive(Clone, Debug)]
pub struct PredatorPrey {
    config: PredatorPreyConfig,
    predators: Vec<Pos>,
    prey: Vec<Option<Pos>>,
    step: usize,
    rng: ChaCha8Rng,
}

fn offset(p: Pos, d: (isize, isize), size: usize) -> Option<Pos> {
    let r = p.0 as isize + d.0;
    let c = p.1 as isize + d.1;
    (r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size).then_some((r as usize, c as usize))
}

fn chebyshev(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Next prey positions. Each alive prey, in index order, stays with
/// probability `prey_stay_prob`; otherwise it steps to the free orthogonal
/// neighbour farthest (Manhattan) from the nearest predator inside its own
/// view window, ties broken uniformly, or to a uniformly random free
/// neighbour when no predator is visible. Cells holding a predator or an
/// already-placed prey are never entered.
pub fn prey_moves(
    config: &PredatorPreyConfig,
    predators: &[Pos],
    prey: &[Option<Pos>],
    rng: &mut impl Rng,
) -> Vec<Option<Pos>> {
    let mut out = prey.to_vec();
    for k in 0..out.len() {
        let Some(here) = out[k] else { continue };
        let stay = rng.gen::<f64>() < config.prey_stay_prob;
        if stay {
            continue;
        }
        let occupied = |p: Pos, out: &[Option<Pos>]| {
            predators.contains(&p) || out.iter().enumerate().any(|(j, q)| j != k && *q == Some(p))
        };
        let free: Vec<Pos> = Action::ALL[..4]
            .iter()
            .filter_map(|a| offset(here, a.delta(), config.grid_size))
            .filter(|&p| !occupied(p, &out))
            .collect();
        if free.is_empty() {
            continue;
        }
        let visible: Vec<Pos> = predators
            .iter()
            .copied()
            .filter(|&p| chebyshev(p, here) <= config.view_radius)
            .collect();
        let choice = if visible.is_empty() {
            *free.choose(rng).expect("non-empty")
        } else {
            let score = |p: Pos| visible.iter().map(|&q| manhattan(p, q)).min().expect("non-empty");
            let best = free.iter().map(|&p| score(p)).max().expect("non-empty");
            let ties: Vec<Pos> = free.into_iter().filter(|&p| score(p) == best).collect();
            *ties.choose(rng).expect("non-empty")
        };
        out[k] = Some(choice);
    }
    out
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let mut world = Self {
            predators: vec![],
            prey: vec![],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
        };
        world.reset(0);
        Ok(world)
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    pub fn predators(&self) -> &[Pos] {
        &self.predators
    }

    pub fn prey(&self) -> &[Option<Pos>] {
        &self.prey
    }

    pub fn prey_alive(&self) -> usize {
        self.prey.iter().flatten().count()
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Places entities by hand; positions must be on-grid and prey cells
    /// distinct from each other and from predators.
    pub fn set_positions(&mut self, predators: Vec<Pos>, prey: Vec<Option<Pos>>) -> Result<(), WorldError> {
        let g = self.config.grid_size;
        let on_grid = |p: &Pos| p.0 < g && p.1 < g;
        if predators.len() != self.config.n_predators || !predators.iter().all(on_grid) {
            return Err(WorldError::Config("bad predator placement".into()));
        }
        let alive: Vec<Pos> = prey.iter().flatten().copied().collect();
        let distinct = alive.iter().enumerate().all(|(i, p)| !alive[..i].contains(p));
        if !alive.iter().all(on_grid) || !distinct || alive.iter().any(|p| predators.contains(p)) {
            return Err(WorldError::Config("bad prey placement".into()));
        }
        self.predators = predators;
        self.prey = prey;
        Ok(())
    }

    /// Prey move from the current state using `rng`.
    pub fn prey_move(&self, rng: &mut impl Rng) -> Vec<Option<Pos>> {
        prey_moves(&self.config, &self.predators, &self.prey, rng)
    }

    fn in_range(&self, predator: Pos, prey: Pos) -> bool {
        match self.config.capture_range {
            CaptureRange::Moore => chebyshev(predator, prey) == 1,
            CaptureRange::VonNeumann => manhattan(predator, prey) == 1,
        }
    }

    pub fn observe(&self) -> Observation {
        let w = self.config.window();
        let r = self.config.view_radius as isize;
        let dim = self.config.obs_dim();
        let norm = (self.config.grid_size.max(2) - 1) as f64;
        let mut data = vec![0.0; self.config.n_predators * dim];
        for (i, &me) in self.predators.iter().enumerate() {
            let row = &mut data[i * dim..(i + 1) * dim];
            row[0] = me.0 as f64 / norm;
            row[1] = me.1 as f64 / norm;
            for dr in -r..=r {
                for dc in -r..=r {
                    let Some(cell) = offset(me, (dr, dc), self.config.grid_size) else {
                        continue;
                    };
                    let k = ((dr + r) as usize) * w + (dc + r) as usize;
                    if self.predators.contains(&cell) {
                        row[2 + k] = 1.0;
                    }
                    if self.prey.contains(&Some(cell)) {
                        row[2 + w * w + k] = 1.0;
                    }
                }
            }
        }
        Observation {
            data,
            alive: vec![true; self.config.n_predators],
        }
    }
}

impl World for PredatorPrey {
    fn n_agents(&self) -> usize {
        self.config.n_predators
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn n_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn idle_action(&self) -> usize {
        Action::Stay as usize
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.config.grid_size;
        let cells = index::sample(&mut self.rng, g * g, self.config.n_predators + self.config.n_prey);
        let mut cells = cells.into_iter().map(|c| (c / g, c % g));
        self.predators = cells.by_ref().take(self.config.n_predators).collect();
        self.prey = cells.map(Some).collect();
        self.step = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<Step, WorldError> {
        if self.step >= self.config.max_steps || self.prey_alive() == 0 {
            return Err(WorldError::Finished);
        }
        check_actions(actions, self.config.n_predators, Action::ALL.len())?;
        let t = self.step;
        for (p, &a) in self.predators.iter_mut().zip(actions) {
            let target = offset(*p, Action::ALL[a].delta(), self.config.grid_size);
            if let Some(target) = target {
                if !self.prey.contains(&Some(target)) {
                    *p = target;
                }
            }
        }

        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        self.prey = self.prey_move(&mut rng);
        self.rng = rng;

        let mut reward = 0.0;
        let mut events = Vec::new();
        let mut captured = Vec::new();
        for (k, prey) in self.prey.iter().enumerate() {
            let Some(prey) = *prey else { continue };
            let hunters: Vec<usize> = (0..self.predators.len())
                .filter(|&i| self.in_range(self.predators[i], prey))
                .collect();
            match hunters.len() {
                0 => {}
                1 => {
                    reward += self.config.penalty;
                    events.push(Event {
                        step: t,
                        kind: EventKind::SoloAttempt,
                        entities: vec![k, hunters[0]],
                        reward: self.config.penalty,
                    });
                }
                _ => {
                    reward += self.config.capture_reward;
                    captured.push(k);
                    let mut entities = vec![k];
                    entities.extend(hunters);
                    events.push(Event {
                        step: t,
                        kind: EventKind::Capture,
                        entities,
                        reward: self.config.capture_reward,
                    });
                }
            }
        }
        for k in captured {
            self.prey[k] = None;
        }
        reward += self.config.step_cost;
        events.push(Event {
            step: t,
            kind: EventKind::StepCost,
            entities: vec![],
            reward: self.config.step_cost,
        });
        self.step += 1;
        let done = self.prey_alive() == 0 || self.step >= self.config.max_steps;
        Ok(Step {
            obs: self.observe(),
            reward,
            done,
            events,
        })
    }

    fn success(&self) -> bool {
        self.prey_alive() == 0
    }

    fn agent_positions(&self) -> Option<Vec<Pos>> {
        Some(self.predators.clone())
    }
}
