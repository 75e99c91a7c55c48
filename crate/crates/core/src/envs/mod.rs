//! Seeded environments: highway-lite lane driving and a small cliff gridworld.

mod gridworld;
mod highway;
mod reward;

use serde::{Deserialize, Serialize};

pub use gridworld::{Gridworld, GridworldConfig, GRID_ACTION_NAMES};
pub use highway::{Highway, HighwayConfig, HighwayAction, HIGHWAY_ACTION_NAMES};
pub use reward::{load_reward_table, Normalization, ProxyRewardConfig, StepEvents};

use crate::error::Result;

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub proxy_reward: f64,
    pub done: bool,
    pub events: StepEvents,
}

/// Per-episode behavioral metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub crashed: bool,
    pub steps: usize,
    /// Meters travelled by the ego vehicle.
    pub distance: f64,
    pub mean_speed: f64,
    pub lane_change_ratio: f64,
    pub mean_lane_position: f64,
    /// Undiscounted sum of proxy rewards.
    pub proxy_return: f64,
}

/// A vehicle as shown to a human labeler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
}

/// Structured world state for replaying a segment in the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub ego: VehicleView,
    pub vehicles: Vec<VehicleView>,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn action_names(&self) -> &'static [&'static str];
    /// Starts a new episode; identical seeds give identical episodes.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    /// Metrics of the current (or just finished) episode.
    fn metrics(&self) -> EpisodeMetrics;
    fn frame(&self) -> Frame;
}

/// Serializable environment selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Highway {
        #[serde(default)]
        config: HighwayConfig,
        /// Preset name (e.g. `PR4`) unless `reward` is given inline.
        #[serde(default = "default_reward_name")]
        proxy_reward: String,
        #[serde(default)]
        reward: Option<ProxyRewardConfig>,
    },
    Gridworld {
        #[serde(default)]
        config: GridworldConfig,
    },
}

fn default_reward_name() -> String {
    "PR4".into()
}

impl EnvSpec {
    pub fn highway(proxy_reward: &str) -> Self {
        EnvSpec::Highway { config: HighwayConfig::default(), proxy_reward: proxy_reward.into(), reward: None }
    }

    pub fn gridworld() -> Self {
        EnvSpec::Gridworld { config: GridworldConfig::default() }
    }

    pub fn proxy_reward(&self) -> Result<Option<ProxyRewardConfig>> {
        match self {
            EnvSpec::Highway { reward: Some(r), .. } => Ok(Some(*r)),
            EnvSpec::Highway { proxy_reward, .. } => ProxyRewardConfig::preset(proxy_reward).map(Some),
            EnvSpec::Gridworld { .. } => Ok(None),
        }
    }

    /// Same environment with a different highway proxy reward.
    pub fn with_proxy_reward(&self, name: &str) -> Self {
        match self {
            EnvSpec::Highway { config, .. } => {
                EnvSpec::Highway { config: config.clone(), proxy_reward: name.into(), reward: None }
            }
            other => other.clone(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Highway { config, .. } => {
                let reward = self.proxy_reward()?.expect("highway has a reward");
                Box::new(Highway::new(config.clone(), reward)?)
            }
            EnvSpec::Gridworld { config } => Box::new(Gridworld::new(config.clone())?),
        })
    }
}
