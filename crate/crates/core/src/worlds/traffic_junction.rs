//! Traffic junction: cars enter on fixed lanes with pre-assigned routes and
//! choose gas or brake each step. Collisions and time spent on the grid are
//! penalized; an episode succeeds when it is collision-free.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, Event, EventKind, Observation, Pos, Step, World, WorldError};

pub const GAS: usize = 0;
pub const BRAKE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

/// Derived per-difficulty constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub roads: usize,
    pub directions: usize,
    pub dim: usize,
    pub junctions: usize,
    pub n_max: usize,
    pub add_rate: f64,
    pub max_steps: usize,
}

impl Difficulty {
    pub fn layout(self) -> Layout {
        match self {
            Difficulty::Easy => Layout {
                roads: 2,
                directions: 1,
                dim: 7,
                junctions: 1,
                n_max: 5,
                add_rate: 0.3,
                max_steps: 20,
            },
            Difficulty::Medium => Layout {
                roads: 4,
                directions: 2,
                dim: 14,
                junctions: 1,
                n_max: 10,
                add_rate: 0.2,
                max_steps: 40,
            },
            Difficulty::Hard => Layout {
                roads: 8,
                directions: 2,
                dim: 18,
                junctions: 4,
                n_max: 20,
                add_rate: 0.05,
                max_steps: 60,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficJunctionConfig {
    pub difficulty: Difficulty,
    pub collision_penalty: f64,
    /// Coefficient `c` of the per-car congestion cost `-c·τ`.
    pub congestion_cost: f64,
    pub vision: usize,
}

impl Default for TrafficJunctionConfig {
    fn default() -> Self {
        Self {
            difficulty: Difficulty::Easy,
            collision_penalty: -10.0,
            congestion_cost: 0.01,
            vision: 1,
        }
    }
}

impl TrafficJunctionConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.collision_penalty > 0.0 || self.congestion_cost < 0.0 {
            return Err(WorldError::Config(
                "collision_penalty must be <= 0 and congestion_cost >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        self.difficulty.layout()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Heading {
    East,
    West,
    South,
    North,
}

#[derive(Clone, Copy, Debug)]
struct Lane {
    heading: Heading,
    /// Row for horizontal lanes, column for vertical ones.
    line: usize,
}

impl Lane {
    fn horizontal(self) -> bool {
        matches!(self.heading, Heading::East | Heading::West)
    }

    fn cells(self, dim: usize) -> Vec<Pos> {
        let l = self.line;
        match self.heading {
            Heading::East => (0..dim).map(|c| (l, c)).collect(),
            Heading::West => (0..dim).rev().map(|c| (l, c)).collect(),
            Heading::South => (0..dim).map(|r| (r, l)).collect(),
            Heading::North => (0..dim).rev().map(|r| (r, l)).collect(),
        }
    }
}

fn lanes(d: Difficulty) -> Vec<Lane> {
    use Heading::*;
    let lane = |heading, line| Lane { heading, line };
    match d {
        Difficulty::Easy => vec![lane(East, 3), lane(South, 3)],
        Difficulty::Medium => vec![lane(West, 6), lane(East, 7), lane(South, 6), lane(North, 7)],
        Difficulty::Hard => vec![
            lane(West, 4),
            lane(East, 5),
            lane(West, 12),
            lane(East, 13),
            lane(South, 4),
            lane(North, 5),
            lane(South, 12),
            lane(North, 13),
        ],
    }
}

/// A route enumerated from a lane's entry cell to the grid edge.
#[derive(Clone, Debug, PartialEq)]
struct Route {
    entry: usize,
    cells: Vec<Pos>,
}

/// Straight routes for one-way layouts; for two-way layouts also every single
/// turn onto a perpendicular lane at the crossing cell.
fn routes(d: Difficulty) -> (Vec<Pos>, Vec<Route>) {
    let layout = d.layout();
    let lanes = lanes(d);
    let entries: Vec<Pos> = lanes.iter().map(|l| l.cells(layout.dim)[0]).collect();
    let mut out = Vec::new();
    for (e, &from) in lanes.iter().enumerate() {
        let straight = from.cells(layout.dim);
        out.push(Route {
            entry: e,
            cells: straight.clone(),
        });
        if layout.directions < 2 {
            continue;
        }
        for &to in lanes.iter().filter(|l| l.horizontal() != from.horizontal()) {
            let cross = if from.horizontal() {
                (from.line, to.line)
            } else {
                (to.line, from.line)
            };
            let head = straight.iter().position(|&p| p == cross).expect("lanes cross");
            let tail = to.cells(layout.dim);
            let after = tail.iter().position(|&p| p == cross).expect("lanes cross");
            let mut cells = straight[..=head].to_vec();
            cells.extend_from_slice(&tail[after + 1..]);
            out.push(Route { entry: e, cells });
        }
    }
    (entries, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Car {
    pub route: usize,
    /// Position along the route; equal to the route length once it has left.
    pub index: usize,
    /// Steps since spawning.
    pub tau: usize,
}

#[derive(Clone, Debug)]
pub struct TrafficJunction {
    config: TrafficJunctionConfig,
    layout: Layout,
    entries: Vec<Pos>,
    routes: Vec<Route>,
    slots: Vec<Option<Car>>,
    collided: bool,
    step: usize,
    rng: ChaCha8Rng,
}

impl TrafficJunction {
    pub fn new(config: TrafficJunctionConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let layout = config.layout();
        let (entries, routes) = routes(config.difficulty);
        let mut world = Self {
            slots: vec![None; layout.n_max],
            config,
            layout,
            entries,
            routes,
            collided: false,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        world.reset(0);
        Ok(world)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn route(&self, id: usize) -> &[Pos] {
        &self.routes[id].cells
    }

    pub fn entries(&self) -> &[Pos] {
        &self.entries
    }

    pub fn slots(&self) -> &[Option<Car>] {
        &self.slots
    }

    pub fn active(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn collided(&self) -> bool {
        self.collided
    }

    /// Overrides the car slots; each car must sit on its route.
    pub fn set_cars(&mut self, slots: Vec<Option<Car>>) -> Result<(), WorldError> {
        if slots.len() != self.layout.n_max {
            return Err(WorldError::Config(format!("expected {} slots", self.layout.n_max)));
        }
        for car in slots.iter().flatten() {
            if car.route >= self.routes.len() || car.index >= self.routes[car.route].cells.len() {
                return Err(WorldError::Config(format!("car {car:?} is off its route")));
            }
        }
        self.slots = slots;
        Ok(())
    }

    fn position(&self, car: &Car) -> Pos {
        self.routes[car.route].cells[car.index]
    }

    fn counts(&self) -> Vec<u32> {
        let dim = self.layout.dim;
        let mut grid = vec![0u32; dim * dim];
        for car in self.slots.iter().flatten() {
            let (r, c) = self.position(car);
            grid[r * dim + c] += 1;
        }
        grid
    }

    pub fn obs_dim(&self) -> usize {
        let w = 2 * self.config.vision + 1;
        self.layout.dim * self.layout.dim + self.routes.len() + w * w + 1
    }

    pub fn observe(&self) -> Observation {
        let dim = self.layout.dim;
        let od = self.obs_dim();
        let v = self.config.vision as isize;
        let w = 2 * self.config.vision + 1;
        let grid = self.counts();
        let mut data = vec![0.0; self.layout.n_max * od];
        let mut alive = vec![false; self.layout.n_max];
        for (i, car) in self.slots.iter().enumerate() {
            let Some(car) = car else { continue };
            alive[i] = true;
            let row = &mut data[i * od..(i + 1) * od];
            let (r, c) = self.position(car);
            row[r * dim + c] = 1.0;
            row[dim * dim + car.route] = 1.0;
            let base = dim * dim + self.routes.len();
            for dr in -v..=v {
                for dc in -v..=v {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= dim as isize || cc >= dim as isize {
                        continue;
                    }
                    let k = ((dr + v) as usize) * w + (dc + v) as usize;
                    row[base + k] = grid[rr as usize * dim + cc as usize] as f64;
                }
            }
            row[od - 1] = car.tau as f64 / self.layout.max_steps as f64;
        }
        Observation { data, alive }
    }
}

impl World for TrafficJunction {
    fn n_agents(&self) -> usize {
        self.layout.n_max
    }

    fn obs_dim(&self) -> usize {
        TrafficJunction::obs_dim(self)
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn idle_action(&self) -> usize {
        BRAKE
    }

    fn max_steps(&self) -> usize {
        self.layout.max_steps
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.slots = vec![None; self.layout.n_max];
        self.collided = false;
        self.step = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<Step, WorldError> {
        if self.step >= self.layout.max_steps {
            return Err(WorldError::Finished);
        }
        check_actions(actions, self.layout.n_max, 2)?;
        let t = self.step;
        let mut events = Vec::new();
        let mut reward = 0.0;

        for (i, (slot, &a)) in self.slots.iter_mut().zip(actions).enumerate() {
            match slot {
                Some(car) if a == GAS => car.index += 1,
                Some(_) => {}
                None if a != BRAKE => events.push(Event {
                    step: t,
                    kind: EventKind::IgnoredAction,
                    entities: vec![i],
                    reward: 0.0,
                }),
                None => {}
            }
        }

        // Cars that have just driven off the end are no longer on the grid.
        let on_grid = |routes: &[Route], car: &Car| -> Option<Pos> { routes[car.route].cells.get(car.index).copied() };
        let mut cells: Vec<(Pos, usize)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().and_then(|c| on_grid(&self.routes, c)).map(|p| (p, i)))
            .collect();
        cells.sort();
        for group in cells.chunk_by(|a, b| a.0 == b.0).filter(|g| g.len() > 1) {
            let penalty = self.config.collision_penalty * group.len() as f64;
            reward += penalty;
            self.collided = true;
            events.push(Event {
                step: t,
                kind: EventKind::Collision,
                entities: group.iter().map(|&(_, i)| i).collect(),
                reward: penalty,
            });
        }

        for (i, slot) in self.slots.iter_mut().enumerate() {
            let Some(car) = slot else { continue };
            car.tau += 1;
            let cost = -self.config.congestion_cost * car.tau as f64;
            reward += cost;
            events.push(Event {
                step: t,
                kind: EventKind::Congestion,
                entities: vec![i],
                reward: cost,
            });
        }

        for (i, slot) in self.slots.iter_mut().enumerate() {
            if let Some(car) = slot {
                if car.index == self.routes[car.route].cells.len() {
                    *slot = None;
                    events.push(Event {
                        step: t,
                        kind: EventKind::Exit,
                        entities: vec![i],
                        reward: 0.0,
                    });
                }
            }
        }

        for e in 0..self.entries.len() {
            let draw: f64 = self.rng.gen();
            let entry = self.entries[e];
            let occupied = self.slots.iter().flatten().any(|c| self.position(c) == entry);
            let free_slot = self.slots.iter().position(Option::is_none);
            let (Some(slot), false) = (free_slot, occupied) else {
                continue;
            };
            if draw >= self.layout.add_rate {
                continue;
            }
            let choices: Vec<usize> = (0..self.routes.len()).filter(|&r| self.routes[r].entry == e).collect();
            let route = *choices.choose(&mut self.rng).expect("every entry has a route");
            self.slots[slot] = Some(Car {
                route,
                index: 0,
                tau: 0,
            });
            events.push(Event {
                step: t,
                kind: EventKind::Spawn,
                entities: vec![slot, route],
                reward: 0.0,
            });
        }

        self.step += 1;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.step >= self.layout.max_steps,
            events,
        })
    }

    fn success(&self) -> bool {
        !self.collided
    }

    fn agent_positions(&self) -> Option<Vec<Pos>> {
        Some(
            self.slots
                .iter()
                .map(|s| s.as_ref().map_or((0, 0), |c| self.position(c)))
                .collect(),
        )
    }
}
