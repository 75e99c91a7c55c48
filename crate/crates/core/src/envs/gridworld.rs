//! 8x8 cliff gridworld with a sparse proxy reward.
//!
//! Start and goal sit in the bottom corners with a cliff between them; a short
//! interior wall forces a detour. Reward is +1 at the goal, -1 on the cliff
//! (both terminal) and 0 otherwise.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{EpisodeMetrics, Environment, Frame, StepEvents, StepOutcome, VehicleView};
use crate::error::{config_err, usage_err, Result};

pub const GRID_ACTION_NAMES: [&str; 4] = ["UP", "DOWN", "LEFT", "RIGHT"];

type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridworldConfig {
    pub size: usize,
    pub start: Cell,
    pub goal: Cell,
    pub cliff: Vec<Cell>,
    pub walls: Vec<Cell>,
    pub max_steps: usize,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        Self {
            size: 8,
            start: (7, 0),
            goal: (7, 7),
            cliff: (1..7).map(|c| (7, c)).collect(),
            walls: (4..7).map(|r| (r, 4)).collect(),
            max_steps: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    config: GridworldConfig,
    pos: Cell,
    steps: usize,
    ret: f64,
    fell: bool,
    done: bool,
}

impl Gridworld {
    pub fn new(config: GridworldConfig) -> Result<Self> {
        let inside = |&(r, c): &Cell| r < config.size && c < config.size;
        if config.size < 2 || !inside(&config.start) || !inside(&config.goal) || config.max_steps == 0 {
            return config_err("gridworld start/goal must lie on a grid of size >= 2");
        }
        if !config.cliff.iter().chain(&config.walls).all(inside) {
            return config_err("gridworld cliff and wall cells must lie on the grid");
        }
        let pos = config.start;
        Ok(Self { config, pos, steps: 0, ret: 0.0, fell: false, done: true })
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.config
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    /// Cell a move leads to, ignoring cliffs; walls and edges block.
    pub fn next_cell(&self, (r, c): Cell, action: usize) -> Cell {
        let n = self.config.size;
        let to = match action {
            0 if r > 0 => (r - 1, c),
            1 if r + 1 < n => (r + 1, c),
            2 if c > 0 => (r, c - 1),
            3 if c + 1 < n => (r, c + 1),
            _ => (r, c),
        };
        if self.config.walls.contains(&to) {
            (r, c)
        } else {
            to
        }
    }

    pub fn encode(&self, (r, c): Cell) -> Vec<f64> {
        let mut v = vec![0.0; self.config.size * self.config.size];
        v[r * self.config.size + c] = 1.0;
        v
    }

    /// Inverse of [`Gridworld::encode`] for one-hot observations.
    pub fn decode(&self, obs: &[f64]) -> Option<Cell> {
        let i = obs.iter().position(|&x| x > 0.5)?;
        Some((i / self.config.size, i % self.config.size))
    }

    /// Shortest safe path length from every cell to the goal (`None` if unreachable).
    pub fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let n = self.config.size;
        let mut dist = vec![None; n * n];
        let idx = |(r, c): Cell| r * n + c;
        let mut queue = VecDeque::from([self.config.goal]);
        dist[idx(self.config.goal)] = Some(0);
        while let Some(cell) = queue.pop_front() {
            let d = dist[idx(cell)].expect("queued cells have distances");
            for r in 0..n {
                for c in 0..n {
                    let from = (r, c);
                    if dist[idx(from)].is_some()
                        || self.config.walls.contains(&from)
                        || self.config.cliff.contains(&from)
                    {
                        continue;
                    }
                    if (0..4).any(|a| self.next_cell(from, a) == cell && from != cell) {
                        dist[idx(from)] = Some(d + 1);
                        queue.push_back(from);
                    }
                }
            }
        }
        dist
    }
}

impl Environment for Gridworld {
    fn obs_dim(&self) -> usize {
        self.config.size * self.config.size
    }

    fn action_count(&self) -> usize {
        GRID_ACTION_NAMES.len()
    }

    fn action_names(&self) -> &'static [&'static str] {
        &GRID_ACTION_NAMES
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.config.start;
        self.steps = 0;
        self.ret = 0.0;
        self.fell = false;
        self.done = false;
        self.encode(self.pos)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return usage_err("step called on a finished episode; call reset first");
        }
        if action >= GRID_ACTION_NAMES.len() {
            return usage_err(format!("invalid gridworld action {action}"));
        }
        self.pos = self.next_cell(self.pos, action);
        self.steps += 1;
        let (reward, terminal) = if self.pos == self.config.goal {
            (1.0, true)
        } else if self.config.cliff.contains(&self.pos) {
            self.fell = true;
            (-1.0, true)
        } else {
            (0.0, false)
        };
        self.ret += reward;
        self.done = terminal || self.steps >= self.config.max_steps;
        let events = StepEvents { crashed: self.fell, ..Default::default() };
        Ok(StepOutcome { observation: self.encode(self.pos), proxy_reward: reward, done: self.done, events })
    }

    fn metrics(&self) -> EpisodeMetrics {
        EpisodeMetrics { crashed: self.fell, steps: self.steps, proxy_return: self.ret, ..Default::default() }
    }

    fn frame(&self) -> Frame {
        Frame { ego: VehicleView { lane: self.pos.0, x: self.pos.1 as f64, speed: 0.0 }, vehicles: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_and_edge_block_movement() {
        let mut g = Gridworld::new(GridworldConfig::default()).unwrap();
        g.reset(0);
        g.step(2).unwrap(); // LEFT into the edge
        assert_eq!(g.position(), (7, 0));
        assert_eq!(g.next_cell((5, 3), 3), (5, 3)); // RIGHT into wall at (5, 4)
    }

    #[test]
    fn cliff_is_terminal_penalty() {
        let mut g = Gridworld::new(GridworldConfig::default()).unwrap();
        g.reset(0);
        let out = g.step(3).unwrap();
        assert!(out.done);
        assert_eq!(out.proxy_reward, -1.0);
        assert!(g.metrics().crashed);
    }

    #[test]
    fn goal_is_terminal_reward() {
        let cfg = GridworldConfig { start: (6, 7), ..Default::default() };
        let mut g = Gridworld::new(cfg).unwrap();
        g.reset(0);
        let out = g.step(1).unwrap();
        assert!(out.done);
        assert_eq!(out.proxy_reward, 1.0);
    }

    #[test]
    fn episode_cap() {
        let mut g = Gridworld::new(GridworldConfig::default()).unwrap();
        g.reset(0);
        let mut n = 0;
        while !g.step(2).unwrap().done {
            n += 1;
        }
        assert_eq!(n + 1, 64);
    }
}
