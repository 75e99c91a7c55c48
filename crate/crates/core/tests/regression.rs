use std::path::Path;

use icopro::envs::{EnvSpec, GridworldConfig};
use icopro::qfunction::{DuelingQ, QNetConfig};
use icopro::trainer::{evaluate, run, MemorySink, NoisyLabelerPolicy, RunConfig, RunContext};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform-random driving on PR4 with pinned seeds. The values were measured
/// once; a change means the simulator's dynamics or crash check moved.
#[test]
fn random_policy_highway_anchor() {
    let q = DuelingQ::new(QNetConfig::new(35, 5), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut policy = NoisyLabelerPolicy { q: &q, epsilon: 0.0, p: 1.0, rng: ChaCha8Rng::seed_from_u64(9) };
    let s = evaluate(&mut policy, &EnvSpec::highway("PR4"), 100, 1234).unwrap();
    assert_eq!(s.crash_rate.mean, 0.66);
    assert_eq!(s.steps.mean, 32.95);
    assert_eq!(s.distance.mean, 735.57);
    assert!((s.speed.mean - 22.866717859254845).abs() < 1e-9);
    assert_eq!(s.proxy_return.mean, -0.66);
}

fn grid_config(seed: u64) -> RunConfig {
    serde_json::from_value(serde_json::json!({
        "method": "icopro",
        "env": {"kind": "gridworld"},
        "labeler": {"type": "grid_oracle"},
        "seed": seed,
        "trainer": {"total_iters": 4, "rollout_len": 64, "queries_per_iter": 2, "segment_len": 4,
                    "eval_episodes": 2, "encoder_hidden": [16], "head_hidden": [16]}
    }))
    .unwrap()
}

fn run_grid(seed: u64) -> MemorySink {
    let cfg = grid_config(seed);
    let names = cfg.env.build().unwrap().action_names();
    let mut labeler = cfg.labeler.build(Path::new("."), Some(&GridworldConfig::default()), names, None, seed).unwrap();
    let mut sink = MemorySink::default();
    let outcome = run(&cfg, labeler.as_mut(), &mut sink, Path::new("."), &RunContext::default()).unwrap();
    assert_eq!(outcome.feedback.labels(), &sink.labels[..]);
    sink
}

#[test]
fn library_run_is_reproducible() {
    let a = run_grid(5);
    let b = run_grid(5);
    assert_eq!(a.records.len(), 4);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!((x.iter, x.env_steps, x.labels_total), (y.iter, y.env_steps, y.labels_total));
        assert_eq!(x.eval, y.eval);
        assert_eq!(x.env_steps, x.iter * 64);
    }
    assert_eq!(a.labels, b.labels);
    assert!(a.labels.iter().all(|l| l.label_action < 4));
}
