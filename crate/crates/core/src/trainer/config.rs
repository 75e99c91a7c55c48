use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{config_err, Result};
use crate::labelers::LabelerConfig;
use crate::qfunction::sha256_hex;

/// Hyper-parameters of the iterative trainer and its baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub total_iters: usize,
    pub rollout_len: usize,
    pub queries_per_iter: usize,
    pub segment_len: usize,
    pub acc_target: f64,
    pub prop_epochs: usize,
    pub window_iters: usize,
    pub epsilon: f64,
    pub margin: f64,
    pub pseudo_weight: f64,
    pub gamma: f64,
    pub n_step: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub align_max_epochs: usize,
    pub eval_episodes: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub rainbow: RainbowConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_iters: 150,
            rollout_len: 1000,
            queries_per_iter: 10,
            segment_len: 10,
            acc_target: 0.98,
            prop_epochs: 2,
            window_iters: 100,
            epsilon: 0.01,
            margin: 0.05,
            pseudo_weight: 0.5,
            gamma: 0.99,
            n_step: 20,
            batch_size: 128,
            lr: 1e-4,
            align_max_epochs: 50,
            eval_episodes: 50,
            encoder_hidden: vec![128, 128],
            head_hidden: vec![128],
            rainbow: RainbowConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_iters", self.total_iters),
            ("rollout_len", self.rollout_len),
            ("segment_len", self.segment_len),
            ("window_iters", self.window_iters),
            ("n_step", self.n_step),
            ("batch_size", self.batch_size),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return config_err(format!("trainer.{name} must be at least 1"));
            }
        }
        if self.queries_per_iter * self.segment_len > self.rollout_len {
            return config_err("trainer.queries_per_iter * segment_len exceeds rollout_len");
        }
        let unit = [("acc_target", self.acc_target), ("epsilon", self.epsilon), ("pseudo_weight", self.pseudo_weight)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return config_err(format!("trainer.{name} must lie in [0, 1]"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config_err("trainer.gamma must lie in (0, 1]");
        }
        if self.margin < 0.0 || !(self.lr > 0.0) {
            return config_err("trainer.margin must be >= 0 and trainer.lr > 0");
        }
        self.rainbow.validate()
    }

    /// Total environment steps of a run.
    pub fn env_steps(&self) -> usize {
        self.total_iters * self.rollout_len
    }
}

/// Settings of the value-only baseline (also used to train labelers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainbowConfig {
    pub batch_size: usize,
    pub target_update_period: usize,
    pub max_grad_norm: f64,
    pub warmup_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub buffer_size: usize,
    pub updates_per_step: usize,
}

impl Default for RainbowConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            target_update_period: 2000,
            max_grad_norm: 10.0,
            warmup_steps: 1600,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.1,
            buffer_size: 1_000_000,
            updates_per_step: 1,
        }
    }
}

impl RainbowConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.target_update_period == 0 || self.buffer_size == 0 {
            return config_err("rainbow batch_size, target_update_period and buffer_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_decay_fraction)
        {
            return config_err("rainbow epsilon settings must lie in [0, 1]");
        }
        Ok(())
    }

    /// Linearly decayed exploration rate after `step` of `total` steps.
    pub fn epsilon_at(&self, step: usize, total: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * total as f64).max(1.0);
        let frac = step as f64 / span;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Icopro,
    RainbowLite,
    Bc,
    Dagger,
    Dqfd,
    PvpPlusR,
    PvpMinusR,
    AblateAlign,
    AblateTgt,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Icopro,
        Method::RainbowLite,
        Method::Bc,
        Method::Dagger,
        Method::Dqfd,
        Method::PvpPlusR,
        Method::PvpMinusR,
        Method::AblateAlign,
        Method::AblateTgt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Icopro => "icopro",
            Method::RainbowLite => "rainbow_lite",
            Method::Bc => "bc",
            Method::Dagger => "dagger",
            Method::Dqfd => "dqfd",
            Method::PvpPlusR => "pvp_plus_r",
            Method::PvpMinusR => "pvp_minus_r",
            Method::AblateAlign => "ablate_align",
            Method::AblateTgt => "ablate_tgt",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match Self::ALL.into_iter().find(|m| m.name() == name) {
            Some(m) => Ok(m),
            None => config_err(format!("unknown method `{name}`")),
        }
    }
}

/// Complete description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub method: Method,
    pub env: EnvSpec,
    #[serde(default = "default_labeler")]
    pub labeler: LabelerConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub seed: u64,
    /// Run directory of a finished run whose labels `bc` trains on.
    #[serde(default)]
    pub bc_source: Option<std::path::PathBuf>,
}

fn default_labeler() -> LabelerConfig {
    LabelerConfig::None
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.env.build()?;
        let needs_labels = !matches!(self.method, Method::RainbowLite | Method::Bc);
        if needs_labels && self.labeler == LabelerConfig::None {
            return config_err(format!("method {} needs a labeler", self.method.name()));
        }
        if self.method == Method::Bc && self.bc_source.is_none() {
            return config_err("method bc needs bc_source (a finished run directory)");
        }
        if self.seed >= 1 << 31 {
            return config_err("seed must be below 2^31");
        }
        Ok(())
    }

    /// Stable digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// First evaluation episode seed; disjoint from all training seeds.
    pub fn eval_seed(&self) -> u64 {
        (1 << 63) | (self.seed << 24)
    }

    /// Seed of training episode `episode_id`.
    pub fn episode_seed(&self, episode_id: u64) -> u64 {
        (self.seed << 32) | (episode_id & 0xffff_ffff)
    }
}
