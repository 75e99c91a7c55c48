//! Event-weighted proxy rewards with optional min-max scaling into `[-1, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    MinMaxToUnit,
}

/// Weights per driving event. The lane-index weight multiplies the ego's
/// normalized lane index in `[0, 1]`; the other events are indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyRewardConfig {
    #[serde(default)]
    pub change_lane: f64,
    #[serde(default)]
    pub high_speed: f64,
    #[serde(default)]
    pub low_speed: f64,
    #[serde(default)]
    pub crash: f64,
    #[serde(default)]
    pub normalized_lane_index: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

/// What happened during one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub changed_lane: bool,
    pub high_speed: bool,
    pub low_speed: bool,
    pub crashed: bool,
    /// Lane index scaled to `[0, 1]`, leftmost lane is 0.
    pub lane_position: f64,
}

impl ProxyRewardConfig {
    const fn weights(change_lane: f64, high_speed: f64, low_speed: f64, crash: f64, lane: f64, normalization: Normalization) -> Self {
        Self { change_lane, high_speed, low_speed, crash, normalized_lane_index: lane, normalization }
    }

    fn weight_list(&self) -> [f64; 5] {
        [self.change_lane, self.high_speed, self.low_speed, self.crash, self.normalized_lane_index]
    }

    /// Sum of the negative weights and sum of the positive weights.
    pub fn raw_bounds(&self) -> (f64, f64) {
        let w = self.weight_list();
        (w.iter().filter(|&&x| x < 0.0).sum(), w.iter().filter(|&&x| x > 0.0).sum())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_list().iter().any(|w| !w.is_finite()) {
            return config_err("proxy reward weights must be finite");
        }
        if self.normalization == Normalization::MinMaxToUnit {
            let (lo, hi) = self.raw_bounds();
            if hi <= lo {
                return config_err("min-max normalization needs distinct min and max raw rewards");
            }
        }
        Ok(())
    }

    pub fn raw(&self, e: &StepEvents) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        self.change_lane * ind(e.changed_lane)
            + self.high_speed * ind(e.high_speed)
            + self.low_speed * ind(e.low_speed)
            + self.crash * ind(e.crashed)
            + self.normalized_lane_index * e.lane_position
    }

    pub fn reward(&self, e: &StepEvents) -> Result<f64> {
        let raw = self.raw(e);
        match self.normalization {
            Normalization::None => Ok(raw),
            Normalization::MinMaxToUnit => {
                let (lo, hi) = self.raw_bounds();
                if hi <= lo {
                    return config_err("min-max normalization needs distinct min and max raw rewards");
                }
                Ok(2.0 * (raw - lo) / (hi - lo) - 1.0)
            }
        }
    }

    /// Built-in tables. `PRExp`, `PR1`..`PR4` belong to the fast lane-changing
    /// labeler; the `-R` suffixed variants to the right-lane-preferring one.
    pub fn presets() -> BTreeMap<String, ProxyRewardConfig> {
        use Normalization::{MinMaxToUnit as U, None as N};
        let entries = [
            ("PRExp", Self::weights(0.2, 1.5, -0.5, -1.7, 0.0, U)),
            ("PR1", Self::weights(0.0, 2.0, -1.0, -1.0, 0.0, U)),
            ("PR2", Self::weights(0.2, 0.8, 0.0, -1.0, 0.0, U)),
            ("PR3", Self::weights(0.0, 0.0, 0.0, -1.0, 0.0, U)),
            ("PR4", Self::weights(0.0, 0.0, 0.0, -1.0, 0.0, N)),
            ("PRExp-R", Self::weights(0.2, 1.7, -0.5, -1.9, 0.5, U)),
            ("PR1-R", Self::weights(0.0, 1.5, -0.5, -1.5, 0.5, U)),
            ("PR2-R", Self::weights(0.0, 0.8, 0.0, -1.0, 0.2, U)),
            ("PR3-R", Self::weights(0.0, 0.0, 0.0, -1.0, 0.0, U)),
            ("PR4-R", Self::weights(0.0, 0.0, 0.0, -1.0, 0.0, N)),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match Self::presets().remove(name) {
            Some(c) => Ok(c),
            None => config_err(format!("unknown proxy reward `{name}`")),
        }
    }
}

/// Loads a reward table: a JSON object mapping names to reward configs.
///
/// Entries are layered over the built-in presets, so a document may override
/// `PRExp` or add custom names. Unknown fields inside an entry are rejected.
pub fn load_reward_table(json: &str) -> Result<BTreeMap<String, ProxyRewardConfig>> {
    let custom: BTreeMap<String, ProxyRewardConfig> = serde_json::from_str(json)?;
    let mut table = ProxyRewardConfig::presets();
    for (name, cfg) in custom {
        cfg.validate().map_err(|e| crate::Error::Config(format!("{name}: {e}")))?;
        table.insert(name, cfg);
    }
    Ok(table)
}
