//! Highway-lite: a straight multi-lane road with constant-speed traffic.
//!
//! The ego vehicle acts at the policy frequency with five discrete meta-actions.
//! Lane changes are instantaneous; speed changes are fixed increments. A crash
//! happens when, at any instant of a step, the ego and another vehicle share a
//! lane with a longitudinal gap below `crash_gap`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpisodeMetrics, Environment, Frame, ProxyRewardConfig, StepEvents, StepOutcome, VehicleView};
use crate::error::{config_err, usage_err, Result};

pub const HIGHWAY_ACTION_NAMES: [&str; 5] = ["LANE_LEFT", "LANE_RIGHT", "FASTER", "SLOWER", "IDLE"];

/// Features per observed vehicle row.
pub const FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighwayAction {
    LaneLeft = 0,
    LaneRight = 1,
    Faster = 2,
    Slower = 3,
    Idle = 4,
}

impl HighwayAction {
    pub fn from_index(i: usize) -> Option<Self> {
        use HighwayAction::*;
        [LaneLeft, LaneRight, Faster, Slower, Idle].get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayConfig {
    pub lanes: usize,
    pub vehicles: usize,
    /// Episode length in decision steps.
    pub time_limit: usize,
    /// Decisions per second.
    pub policy_frequency: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Speeds at or above this count as high speed, below as low speed.
    pub high_speed_threshold: f64,
    pub traffic_speed_min: f64,
    pub traffic_speed_max: f64,
    /// Speed change of FASTER / SLOWER in m/s.
    pub speed_step: f64,
    /// Same-lane longitudinal gap (m) below which vehicles collide.
    pub crash_gap: f64,
    /// Observation rows including the ego row (5 gives 35 features).
    pub observed_rows: usize,
    /// Longitudinal range (m) of perception; also the x normalization scale.
    pub perception_distance: f64,
    /// Offset (m) of the first spawn slot ahead of the ego.
    pub spawn_start: f64,
    /// Distance (m) between successive spawn slots.
    pub spawn_spacing: f64,
    /// Minimum same-lane distance (m) between spawned vehicles.
    pub spawn_min_gap: f64,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        Self {
            lanes: 5,
            vehicles: 40,
            time_limit: 50,
            policy_frequency: 1.0,
            speed_min: 19.0,
            speed_max: 30.0,
            high_speed_threshold: 21.0,
            traffic_speed_min: 19.0,
            traffic_speed_max: 27.0,
            speed_step: 2.0,
            crash_gap: 10.0,
            observed_rows: 5,
            perception_distance: 100.0,
            spawn_start: 30.0,
            spawn_spacing: 12.0,
            spawn_min_gap: 20.0,
        }
    }
}

impl HighwayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 {
            return config_err("highway needs at least 2 lanes");
        }
        if self.time_limit < 1 {
            return config_err("time_limit must be at least 1");
        }
        if !(self.speed_min < self.speed_max) {
            return config_err("speed range must satisfy min < max");
        }
        if !(self.traffic_speed_min <= self.traffic_speed_max) {
            return config_err("traffic speed range must satisfy min <= max");
        }
        if self.policy_frequency <= 0.0 || self.observed_rows == 0 || self.perception_distance <= 0.0 {
            return config_err("policy_frequency, observed_rows and perception_distance must be positive");
        }
        if self.spawn_spacing <= 0.0 || self.spawn_min_gap < 0.0 {
            return config_err("spawn spacing must be positive");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.observed_rows * FEATURES
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Vehicle {
    lane: usize,
    x: f64,
    speed: f64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    steps: usize,
    distance: f64,
    lane_change_actions: usize,
    lane_position_sum: f64,
    proxy_return: f64,
    crashed: bool,
}

#[derive(Debug, Clone)]
pub struct Highway {
    config: HighwayConfig,
    reward: ProxyRewardConfig,
    ego: Vehicle,
    traffic: Vec<Vehicle>,
    tally: Tally,
    done: bool,
}

impl Highway {
    pub fn new(config: HighwayConfig, reward: ProxyRewardConfig) -> Result<Self> {
        config.validate()?;
        reward.validate()?;
        let ego = Vehicle { lane: 0, x: 0.0, speed: config.speed_min };
        Ok(Self { config, reward, ego, traffic: Vec::new(), tally: Tally::default(), done: true })
    }

    pub fn config(&self) -> &HighwayConfig {
        &self.config
    }

    /// Replaces the scene with explicit vehicles (ego first). Used by scripted
    /// scenarios and tests.
    pub fn set_scene(&mut self, ego: (usize, f64, f64), traffic: &[(usize, f64, f64)]) -> Vec<f64> {
        let v = |&(lane, x, speed): &(usize, f64, f64)| Vehicle { lane, x, speed };
        self.ego = v(&ego);
        self.traffic = traffic.iter().map(v).collect();
        self.tally = Tally::default();
        self.done = false;
        self.observe()
    }

    pub fn ego_lane(&self) -> usize {
        self.ego.lane
    }

    pub fn ego_speed(&self) -> f64 {
        self.ego.speed
    }

    fn lane_position(&self, lane: usize) -> f64 {
        lane as f64 / (self.config.lanes - 1) as f64
    }

    fn spawn_traffic(&mut self, rng: &mut ChaCha8Rng) {
        let c = &self.config;
        let mut cursor = c.spawn_start;
        let mut traffic: Vec<Vehicle> = Vec::with_capacity(c.vehicles);
        while traffic.len() < c.vehicles {
            for _ in 0..20 {
                let lane = rng.random_range(0..c.lanes);
                let x = cursor + rng.random_range(0.0..c.spawn_spacing);
                let clear = traffic.iter().all(|v| v.lane != lane || (v.x - x).abs() >= c.spawn_min_gap);
                if clear {
                    let speed = rng.random_range(c.traffic_speed_min..=c.traffic_speed_max);
                    traffic.push(Vehicle { lane, x, speed });
                    break;
                }
            }
            cursor += c.spawn_spacing;
        }
        self.traffic = traffic;
    }

    fn observe(&self) -> Vec<f64> {
        let c = &self.config;
        let lanes_span = (c.lanes - 1) as f64;
        let mut obs = vec![0.0; c.obs_dim()];
        obs[..FEATURES].copy_from_slice(&[
            1.0,
            0.0,
            2.0 * self.ego.lane as f64 / lanes_span - 1.0,
            self.ego.speed / c.speed_max,
            0.0,
            1.0,
            0.0,
        ]);
        let mut near: Vec<(f64, usize)> = self
            .traffic
            .iter()
            .enumerate()
            .map(|(i, v)| ((v.x - self.ego.x).abs(), i))
            .filter(|&(d, _)| d <= c.perception_distance)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let speed_span = c.speed_max - c.speed_min;
        for (row, &(_, i)) in near.iter().take(c.observed_rows - 1).enumerate() {
            let v = &self.traffic[i];
            let base = (row + 1) * FEATURES;
            obs[base..base + FEATURES].copy_from_slice(&[
                1.0,
                ((v.x - self.ego.x) / c.perception_distance).clamp(-1.0, 1.0),
                (v.lane as f64 - self.ego.lane as f64) / lanes_span,
                ((v.speed - self.ego.speed) / speed_span).clamp(-1.0, 1.0),
                0.0,
                1.0,
                0.0,
            ]);
        }
        obs
    }

    /// Minimum |gap| between ego and `v` over one step of linear motion.
    fn min_gap_during_step(&self, v: &Vehicle, dt: f64) -> f64 {
        let g0 = v.x - self.ego.x;
        let g1 = g0 + (v.speed - self.ego.speed) * dt;
        if g0.signum() != g1.signum() || g0 == 0.0 || g1 == 0.0 {
            0.0
        } else {
            g0.abs().min(g1.abs())
        }
    }
}

impl Environment for Highway {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn action_count(&self) -> usize {
        HIGHWAY_ACTION_NAMES.len()
    }

    fn action_names(&self) -> &'static [&'static str] {
        &HIGHWAY_ACTION_NAMES
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lane = rng.random_range(0..self.config.lanes);
        self.ego = Vehicle { lane, x: 0.0, speed: self.config.speed_min + 2.0 };
        self.spawn_traffic(&mut rng);
        self.tally = Tally::default();
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return usage_err("step called on a finished episode; call reset first");
        }
        let Some(action) = HighwayAction::from_index(action) else {
            return usage_err(format!("invalid highway action {action}"));
        };
        let c = &self.config;
        let before = self.ego.lane;
        match action {
            HighwayAction::LaneLeft => self.ego.lane = self.ego.lane.saturating_sub(1),
            HighwayAction::LaneRight => self.ego.lane = (self.ego.lane + 1).min(c.lanes - 1),
            HighwayAction::Faster => self.ego.speed = (self.ego.speed + c.speed_step).min(c.speed_max),
            HighwayAction::Slower => self.ego.speed = (self.ego.speed - c.speed_step).max(c.speed_min),
            HighwayAction::Idle => {}
        }
        let dt = 1.0 / c.policy_frequency;
        let crashed = self
            .traffic
            .iter()
            .filter(|v| v.lane == self.ego.lane)
            .any(|v| self.min_gap_during_step(v, dt) < c.crash_gap);

        self.ego.x += self.ego.speed * dt;
        for v in &mut self.traffic {
            v.x += v.speed * dt;
        }

        let events = StepEvents {
            changed_lane: self.ego.lane != before,
            high_speed: self.ego.speed >= c.high_speed_threshold,
            low_speed: self.ego.speed < c.high_speed_threshold,
            crashed,
            lane_position: self.lane_position(self.ego.lane),
        };
        let proxy_reward = self.reward.reward(&events)?;

        let t = &mut self.tally;
        t.steps += 1;
        t.distance += self.ego.speed * dt;
        if matches!(action, HighwayAction::LaneLeft | HighwayAction::LaneRight) {
            t.lane_change_actions += 1;
        }
        t.lane_position_sum += events.lane_position;
        t.proxy_return += proxy_reward;
        t.crashed = crashed;
        self.done = crashed || t.steps >= c.time_limit;

        Ok(StepOutcome { observation: self.observe(), proxy_reward, done: self.done, events })
    }

    fn metrics(&self) -> EpisodeMetrics {
        let t = &self.tally;
        let steps = t.steps.max(1) as f64;
        EpisodeMetrics {
            crashed: t.crashed,
            steps: t.steps,
            distance: t.distance,
            mean_speed: if t.steps == 0 { 0.0 } else { t.distance / (t.steps as f64 / self.config.policy_frequency) },
            lane_change_ratio: t.lane_change_actions as f64 / steps,
            mean_lane_position: t.lane_position_sum / steps,
            proxy_return: t.proxy_return,
        }
    }

    fn frame(&self) -> Frame {
        let view = |v: &Vehicle| VehicleView { lane: v.lane, x: v.x, speed: v.speed };
        Frame {
            ego: view(&self.ego),
            vehicles: self
                .traffic
                .iter()
                .filter(|v| (v.x - self.ego.x).abs() <= self.config.perception_distance)
                .map(view)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Highway {
        Highway::new(HighwayConfig::default(), ProxyRewardConfig::preset("PR4").unwrap()).unwrap()
    }

    #[test]
    fn same_seed_same_initial_observation() {
        let (mut a, mut b) = (env(), env());
        assert_eq!(a.reset(17), b.reset(17));
        assert_ne!(a.reset(17), b.reset(18));
    }

    #[test]
    fn observation_rows_and_presence() {
        let mut e = env();
        let obs = e.reset(3);
        assert_eq!(obs.len(), 35);
        assert_eq!(obs[0], 1.0);
        for row in 0..5 {
            let p = obs[row * FEATURES];
            assert!(p == 0.0 || p == 1.0);
        }
        assert!(obs.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn padding_rows_are_zero_with_few_neighbors() {
        let mut e = env();
        let obs = e.set_scene((2, 0.0, 21.0), &[(1, 40.0, 21.0)]);
        assert_eq!(obs[FEATURES], 1.0);
        for row in 2..5 {
            assert!(obs[row * FEATURES..(row + 1) * FEATURES].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ego_alone_runs_to_time_limit() {
        let mut e = env();
        e.set_scene((2, 0.0, 21.0), &[]);
        let mut steps = 0;
        loop {
            let out = e.step(HighwayAction::Idle as usize).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 50);
        assert!(!e.metrics().crashed);
        assert!(e.step(4).is_err());
    }

    #[test]
    fn slow_vehicle_ahead_crashes() {
        // Gap 8 m < 10 m at the start of the step: crash on the first decision.
        let mut e = env();
        e.set_scene((1, 0.0, 21.0), &[(1, 8.0, 19.0)]);
        let out = e.step(HighwayAction::Faster as usize).unwrap();
        assert!(out.events.crashed && out.done);
        assert_eq!(out.proxy_reward, -1.0);
    }

    #[test]
    fn closing_gap_crash_trace() {
        // ego 29 m/s behind a 19 m/s car 25 m ahead: after FASTER (30 m/s) the
        // gap closes by 11 m per step: 25 -> 14 (no crash), then 14 -> 3 (crash).
        let mut e = env();
        e.set_scene((1, 0.0, 29.0), &[(1, 25.0, 19.0)]);
        let first = e.step(HighwayAction::Faster as usize).unwrap();
        assert!(!first.events.crashed);
        let second = e.step(HighwayAction::Idle as usize).unwrap();
        assert!(second.events.crashed);
    }

    #[test]
    fn overtaking_through_a_vehicle_is_a_crash() {
        // Gap 12 m ahead, closing 30-19 = 11 m/s => 1 m at step end. Crash.
        let mut e = env();
        e.set_scene((0, 0.0, 30.0), &[(0, 12.0, 19.0)]);
        assert!(e.step(HighwayAction::Idle as usize).unwrap().events.crashed);
    }

    #[test]
    fn lane_left_in_leftmost_lane_is_noop() {
        let mut e = env();
        e.set_scene((0, 0.0, 21.0), &[]);
        let out = e.step(HighwayAction::LaneLeft as usize).unwrap();
        assert_eq!(e.ego_lane(), 0);
        assert!(!out.events.changed_lane);
        let out = e.step(HighwayAction::LaneRight as usize).unwrap();
        assert!(out.events.changed_lane);
        assert_eq!(e.ego_lane(), 1);
    }

    #[test]
    fn speed_clamped_to_range() {
        let mut e = env();
        e.set_scene((2, 0.0, 29.0), &[]);
        e.step(HighwayAction::Faster as usize).unwrap();
        e.step(HighwayAction::Faster as usize).unwrap();
        assert_eq!(e.ego_speed(), 30.0);
        for _ in 0..10 {
            e.step(HighwayAction::Slower as usize).unwrap();
        }
        assert_eq!(e.ego_speed(), 19.0);
    }

    #[test]
    fn spawned_traffic_respects_gaps() {
        let mut e = env();
        e.reset(11);
        assert_eq!(e.traffic.len(), 40);
        for (i, a) in e.traffic.iter().enumerate() {
            assert!(a.x >= 30.0);
            assert!((19.0..=27.0).contains(&a.speed));
            for b in &e.traffic[i + 1..] {
                assert!(a.lane != b.lane || (a.x - b.x).abs() >= 20.0);
            }
        }
    }

    #[test]
    fn six_row_observation_variant() {
        let cfg = HighwayConfig { observed_rows: 6, ..Default::default() };
        let mut e = Highway::new(cfg, ProxyRewardConfig::preset("PR4").unwrap()).unwrap();
        assert_eq!(e.reset(0).len(), 42);
    }
}
