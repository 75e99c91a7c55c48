use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, EpisodeMetrics};
use crate::error::{usage_err, Result};
use crate::qfunction::{argmax, DuelingQ};

/// Maps observations to actions during evaluation.
pub trait Policy {
    fn act(&mut self, obs: &[f64]) -> Result<usize>;
}

/// Greedy (epsilon = 0) policy of a Q-network.
pub struct Greedy<'a>(pub &'a DuelingQ<f64>);

impl Policy for Greedy<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.0.q_values(obs)?))
    }
}

/// A labeler acting on its own: epsilon-greedy over its Q, with each action
/// replaced by a uniform one with probability `p` (DiffRand applied per step).
pub struct NoisyLabelerPolicy<'a> {
    pub q: &'a DuelingQ<f64>,
    pub epsilon: f64,
    pub p: f64,
    pub rng: ChaCha8Rng,
}

impl Policy for NoisyLabelerPolicy<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let n = self.q.action_count();
        let mut a = self.q.select_action(obs, self.epsilon, &mut self.rng)?;
        if self.p > 0.0 && self.rng.random::<f64>() < self.p {
            a = self.rng.random_range(0..n);
        }
        Ok(a)
    }
}

/// Mean and population standard deviation of every episode metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub crash_rate: MetricStats,
    pub distance: MetricStats,
    pub speed: MetricStats,
    pub lane_change_ratio: MetricStats,
    pub lane_position: MetricStats,
    pub steps: MetricStats,
    pub proxy_return: MetricStats,
}

impl EvalSummary {
    pub fn from_episodes(eps: &[EpisodeMetrics]) -> Self {
        let col = |f: fn(&EpisodeMetrics) -> f64| MetricStats::of(&eps.iter().map(f).collect::<Vec<_>>());
        Self {
            episodes: eps.len(),
            crash_rate: col(|m| if m.crashed { 1.0 } else { 0.0 }),
            distance: col(|m| m.distance),
            speed: col(|m| m.mean_speed),
            lane_change_ratio: col(|m| m.lane_change_ratio),
            lane_position: col(|m| m.mean_lane_position),
            steps: col(|m| m.steps as f64),
            proxy_return: col(|m| m.proxy_return),
        }
    }
}

/// Runs `n_episodes` episodes seeded `seed, seed + 1, ...` and aggregates them.
pub fn evaluate(policy: &mut dyn Policy, env: &EnvSpec, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return usage_err("evaluation needs at least one episode");
    }
    let mut world = env.build()?;
    let mut episodes = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes as u64 {
        let mut obs = world.reset(seed.wrapping_add(k));
        loop {
            let out = world.step(policy.act(&obs)?)?;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        episodes.push(world.metrics());
    }
    Ok(EvalSummary::from_episodes(&episodes))
}

/// Discounted proxy return of one episode under `policy`.
pub fn discounted_return(policy: &mut dyn Policy, env: &EnvSpec, seed: u64, gamma: f64) -> Result<f64> {
    let mut world = env.build()?;
    let mut obs = world.reset(seed);
    let (mut ret, mut discount) = (0.0, 1.0);
    loop {
        let out = world.step(policy.act(&obs)?)?;
        ret += discount * out.proxy_reward;
        discount *= gamma;
        obs = out.observation;
        if out.done {
            return Ok(ret);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfunction::QNetConfig;
    use rand::SeedableRng;

    struct Always(usize);

    impl Policy for Always {
        fn act(&mut self, _: &[f64]) -> Result<usize> {
            Ok(self.0)
        }
    }

    #[test]
    fn stats() {
        let s = MetricStats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(MetricStats::of(&[]), MetricStats::default());
    }

    #[test]
    fn greedy_evaluation_repeats_exactly() {
        let env = EnvSpec::highway("PR4");
        let q = DuelingQ::new(QNetConfig::new(35, 5), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a = evaluate(&mut Greedy(&q), &env, 5, 11).unwrap();
        let b = evaluate(&mut Greedy(&q), &env, 5, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 5);
        assert!(evaluate(&mut Greedy(&q), &env, 0, 11).is_err());
    }

    #[test]
    fn gridworld_cliff_return() {
        // RIGHT from the start walks straight onto the cliff.
        let r = discounted_return(&mut Always(3), &EnvSpec::gridworld(), 0, 0.9).unwrap();
        assert_eq!(r, -1.0);
    }
}
