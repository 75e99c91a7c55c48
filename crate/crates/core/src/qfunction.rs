//! Dueling Q-network, epsilon-greedy selection, frozen target copies and
//! checkpoint I/O.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::grad::{codec, Activation, DenseTensor, ForwardTrace, MlpGrads, MlpParams};
use crate::scalar::Scalar;

/// Network shape: `obs -> encoder_hidden... -> features`, then separate value
/// and advantage heads of `head_hidden...` units each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QNetConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    #[serde(default = "default_encoder")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_head")]
    pub head_hidden: Vec<usize>,
}

fn default_encoder() -> Vec<usize> {
    vec![128, 128]
}

fn default_head() -> Vec<usize> {
    vec![128]
}

impl QNetConfig {
    pub fn new(obs_dim: usize, action_count: usize) -> Self {
        Self { obs_dim, action_count, encoder_hidden: default_encoder(), head_hidden: default_head() }
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_count == 0 || self.encoder_hidden.is_empty() {
            return config_err("Q-network needs obs_dim, action_count and at least one encoder layer");
        }
        Ok(())
    }

    fn features(&self) -> usize {
        *self.encoder_hidden.last().expect("validated")
    }

    fn trunk_sizes(&self) -> Vec<usize> {
        std::iter::once(self.obs_dim).chain(self.encoder_hidden.iter().copied()).collect()
    }

    fn head_sizes(&self, out: usize) -> Vec<usize> {
        std::iter::once(self.features())
            .chain(self.head_hidden.iter().copied())
            .chain(std::iter::once(out))
            .collect()
    }

    fn head_activations(&self) -> Vec<Activation> {
        let mut a = vec![Activation::Relu; self.head_hidden.len()];
        a.push(Activation::Identity);
        a
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<S: PartialOrd + Copy>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')`.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingQ<S> {
    config: QNetConfig,
    trunk: MlpParams<S>,
    value: MlpParams<S>,
    advantage: MlpParams<S>,
}

#[derive(Debug, Clone)]
pub struct DuelingTrace<S> {
    trunk: ForwardTrace<S>,
    value: ForwardTrace<S>,
    advantage: ForwardTrace<S>,
    q: DenseTensor<S>,
}

impl<S: Scalar> DuelingTrace<S> {
    pub fn q(&self) -> &DenseTensor<S> {
        &self.q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingGrads<S> {
    pub trunk: MlpGrads<S>,
    pub value: MlpGrads<S>,
    pub advantage: MlpGrads<S>,
}

impl<S: Scalar> DuelingGrads<S> {
    /// Same order as [`DuelingQ::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[S]> {
        let mut v = self.trunk.slices();
        v.extend(self.value.slices());
        v.extend(self.advantage.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v = self.trunk.slices_mut();
        v.extend(self.value.slices_mut());
        v.extend(self.advantage.slices_mut());
        v
    }
}

impl<S: Scalar> DuelingQ<S> {
    pub fn new<R: Rng + ?Sized>(config: QNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let trunk = MlpParams::init(&config.trunk_sizes(), Activation::Relu, Activation::Relu, rng)?;
        let value = MlpParams::init(&config.head_sizes(1), Activation::Relu, Activation::Identity, rng)?;
        let advantage =
            MlpParams::init(&config.head_sizes(config.action_count), Activation::Relu, Activation::Identity, rng)?;
        Ok(Self { config, trunk, value, advantage })
    }

    /// Assembles a network from explicit parts (shapes are checked).
    pub fn from_parts(config: QNetConfig, trunk: MlpParams<S>, value: MlpParams<S>, advantage: MlpParams<S>) -> Result<Self> {
        config.validate()?;
        if trunk.in_dim() != config.obs_dim
            || value.in_dim() != trunk.out_dim()
            || advantage.in_dim() != trunk.out_dim()
            || value.out_dim() != 1
            || advantage.out_dim() != config.action_count
        {
            return config_err("dueling parts do not chain: trunk -> (value: 1, advantage: |A|)");
        }
        Ok(Self { config, trunk, value, advantage })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn action_count(&self) -> usize {
        self.config.action_count
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn trunk(&self) -> &MlpParams<S> {
        &self.trunk
    }

    pub fn value_head(&self) -> &MlpParams<S> {
        &self.value
    }

    pub fn advantage_head(&self) -> &MlpParams<S> {
        &self.advantage
    }

    pub fn advantage_head_mut(&mut self) -> &mut MlpParams<S> {
        &mut self.advantage
    }

    pub fn value_head_mut(&mut self) -> &mut MlpParams<S> {
        &mut self.value
    }

    pub fn trunk_mut(&mut self) -> &mut MlpParams<S> {
        &mut self.trunk
    }

    fn combine(v: &DenseTensor<S>, a: &DenseTensor<S>) -> DenseTensor<S> {
        let (batch, n) = (a.rows(), a.cols());
        let inv_n = S::one() / S::from_usize(n).expect("small");
        let mut q = a.clone();
        for b in 0..batch {
            let row = q.row_slice_mut(b);
            let mean = row.iter().copied().sum::<S>() * inv_n;
            let vb = v.data()[b];
            row.iter_mut().for_each(|x| *x = vb + *x - mean);
        }
        q
    }

    /// Q-values for a batch of states (`batch x obs_dim`).
    pub fn q_batch(&self, states: &DenseTensor<S>) -> Result<DenseTensor<S>> {
        let h = self.trunk.forward(states)?;
        Ok(Self::combine(&self.value.forward(&h)?, &self.advantage.forward(&h)?))
    }

    pub fn q_values(&self, obs: &[S]) -> Result<Vec<S>> {
        Ok(self.q_batch(&DenseTensor::row(obs.to_vec()))?.into_data())
    }

    pub fn forward_traced(&self, states: &DenseTensor<S>) -> Result<DuelingTrace<S>> {
        let trunk = self.trunk.forward_traced(states)?;
        let value = self.value.forward_traced(trunk.output())?;
        let advantage = self.advantage.forward_traced(trunk.output())?;
        let q = Self::combine(value.output(), advantage.output());
        Ok(DuelingTrace { trunk, value, advantage, q })
    }

    /// Parameter gradients given `dL/dQ` (`batch x |A|`).
    pub fn backward(&self, trace: &DuelingTrace<S>, dq: &DenseTensor<S>) -> Result<DuelingGrads<S>> {
        let (batch, n) = (trace.q.rows(), trace.q.cols());
        if dq.rows() != batch || dq.cols() != n {
            return crate::error::usage_err(format!(
                "dL/dQ shape {:?} does not match traced Q ({batch}, {n})",
                dq.shape()
            ));
        }
        let inv_n = S::one() / S::from_usize(n).expect("small");
        let mut dv = Vec::with_capacity(batch);
        let mut da = dq.clone();
        for b in 0..batch {
            let row = da.row_slice_mut(b);
            let total = row.iter().copied().sum::<S>();
            dv.push(total);
            let mean = total * inv_n;
            row.iter_mut().for_each(|x| *x -= mean);
        }
        let dv = DenseTensor::matrix(batch, 1, dv)?;
        let (gv, dh_v) = self.value.backward(&trace.value, &dv, true)?;
        let (ga, dh_a) = self.advantage.backward(&trace.advantage, &da, true)?;
        let mut dh = dh_v.expect("requested");
        dh.axpy(S::one(), &dh_a.expect("requested"))?;
        let (gt, _) = self.trunk.backward(&trace.trunk, &dh, false)?;
        Ok(DuelingGrads { trunk: gt, value: gv, advantage: ga })
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v = self.trunk.param_slices_mut();
        v.extend(self.value.param_slices_mut());
        v.extend(self.advantage.param_slices_mut());
        v
    }

    pub fn param_slices(&self) -> Vec<&[S]> {
        let mut v = self.trunk.param_slices();
        v.extend(self.value.param_slices());
        v.extend(self.advantage.param_slices());
        v
    }

    pub fn param_lengths(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    pub fn zero_grads(&self) -> DuelingGrads<S> {
        DuelingGrads {
            trunk: MlpGrads::zeros_like(&self.trunk),
            value: MlpGrads::zeros_like(&self.value),
            advantage: MlpGrads::zeros_like(&self.advantage),
        }
    }

    /// Epsilon-greedy action: with probability `epsilon` a uniform action,
    /// otherwise the greedy one. No randomness is drawn when `epsilon == 0`.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[S], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.action_count()));
        }
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        codec::encode(&self.trunk, &mut out);
        codec::encode(&self.value, &mut out);
        codec::encode(&self.advantage, &mut out);
        out
    }

    pub fn from_bytes(config: QNetConfig, bytes: &[u8]) -> Result<Self> {
        config.validate()?;
        let trunk_acts = vec![Activation::Relu; config.encoder_hidden.len()];
        let head_acts = config.head_activations();
        let (trunk, a) = codec::decode(bytes, &trunk_acts)?;
        let (value, b) = codec::decode(&bytes[a..], &head_acts)?;
        let (advantage, c) = codec::decode(&bytes[a + b..], &head_acts)?;
        if a + b + c != bytes.len() {
            return Err(Error::Format("trailing bytes after advantage head".into()));
        }
        Self::from_parts(config, trunk, value, advantage)
    }
}

/// Frozen copy of a Q-function used for bootstrapping and pseudo-labels.
/// It can only be replaced wholesale via [`sync_target`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetQ<S>(DuelingQ<S>);

impl<S: Scalar> TargetQ<S> {
    pub fn q_batch(&self, states: &DenseTensor<S>) -> Result<DenseTensor<S>> {
        self.0.q_batch(states)
    }

    pub fn q_values(&self, obs: &[S]) -> Result<Vec<S>> {
        self.0.q_values(obs)
    }

    pub fn network(&self) -> &DuelingQ<S> {
        &self.0
    }
}

pub fn sync_target<S: Scalar>(q: &DuelingQ<S>) -> TargetQ<S> {
    TargetQ(q.clone())
}

/// JSON sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub action_count: usize,
    pub obs_dim: usize,
    pub created_at: String,
    pub config_hash: String,
    pub network: QNetConfig,
    /// Free-form context (environment spec, evaluation seed, metrics, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the parameter blobs to `path` and the sidecar to `path.json`.
pub fn save_checkpoint(q: &DuelingQ<f64>, path: &Path, config_hash: &str, extra: serde_json::Value) -> Result<CheckpointMeta> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, q.to_bytes())?;
    let meta = CheckpointMeta {
        action_count: q.action_count(),
        obs_dim: q.obs_dim(),
        created_at: chrono::Utc::now().to_rfc3339(),
        config_hash: config_hash.to_string(),
        network: q.config().clone(),
        extra,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(DuelingQ<f64>, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let q = DuelingQ::from_bytes(meta.network.clone(), &std::fs::read(path)?)?;
    if q.action_count() != meta.action_count || q.obs_dim() != meta.obs_dim {
        return Err(Error::Format("checkpoint sidecar disagrees with parameter blobs".into()));
    }
    Ok((q, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{DenseTensor, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> DuelingQ<f64> {
        let cfg = QNetConfig { obs_dim: 4, action_count: 3, encoder_hidden: vec![8, 8], head_hidden: vec![6] };
        DuelingQ::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_advantage_head_gives_constant_q() {
        let mut q = small(0);
        for s in q.advantage_head_mut().param_slices_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
        let obs = [0.3, -0.2, 0.9, 0.1];
        let h = q.trunk().forward(&DenseTensor::row(obs.to_vec())).unwrap();
        let v = q.value_head().forward(&h).unwrap().data()[0];
        let vals = q.q_values(&obs).unwrap();
        assert!(vals.iter().all(|&x| x == v));
    }

    #[test]
    fn hand_set_one_unit_network() {
        // trunk: h = relu(2 x0 - x1 + 0.5); value: 3h - 1; advantages: [h, -h, 0] + [0.1, 0.2, 0.3]
        let layer = |w: Vec<f64>, r, c, b: Vec<f64>, act| Layer::new(DenseTensor::matrix(r, c, w).unwrap(), b, act).unwrap();
        let trunk = MlpParams::from_layers(vec![layer(vec![2.0, -1.0], 1, 2, vec![0.5], Activation::Relu)]).unwrap();
        let value = MlpParams::from_layers(vec![layer(vec![3.0], 1, 1, vec![-1.0], Activation::Identity)]).unwrap();
        let adv = MlpParams::from_layers(vec![layer(vec![1.0, -1.0, 0.0], 3, 1, vec![0.1, 0.2, 0.3], Activation::Identity)]).unwrap();
        let cfg = QNetConfig { obs_dim: 2, action_count: 3, encoder_hidden: vec![1], head_hidden: vec![] };
        let q = DuelingQ::from_parts(cfg, trunk, value, adv).unwrap();
        // x = [1, 0.5]: h = 2 - 0.5 + 0.5 = 2; V = 5; A = [2.1, -1.8, 0.3], mean = 0.2
        let vals = q.q_values(&[1.0, 0.5]).unwrap();
        let want = [5.0 + 2.1 - 0.2, 5.0 - 1.8 - 0.2, 5.0 + 0.3 - 0.2];
        for (a, b) in vals.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn advantages_center_on_value() {
        let q = small(1);
        let obs = [0.5, 0.1, -0.7, 0.2];
        let h = q.trunk().forward(&DenseTensor::row(obs.to_vec())).unwrap();
        let v = q.value_head().forward(&h).unwrap().data()[0];
        let s: f64 = q.q_values(&obs).unwrap().iter().map(|x| x - v).sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn constant_advantage_shift_leaves_q_unchanged() {
        let q = small(3);
        let mut shifted = q.clone();
        let last = shifted.advantage_head_mut().layers_mut().last_mut().unwrap();
        last.bias.iter_mut().for_each(|b| *b += 4.25);
        for k in 0..20 {
            let obs: Vec<f64> = (0..4).map(|i| ((k * 7 + i * 3) % 11) as f64 / 5.0 - 1.0).collect();
            let a = q.q_values(&obs).unwrap();
            let b = shifted.q_values(&obs).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
            assert_eq!(argmax(&a), argmax(&b));
        }
    }

    #[test]
    fn observation_width_mismatch() {
        assert!(matches!(small(2).q_values(&[0.0; 5]), Err(Error::Config(_))));
    }

    #[test]
    fn greedy_selection_is_deterministic_and_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        let q = small(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = [0.1, 0.2, 0.3, 0.4];
        let a = q.select_action(&obs, 0.0, &mut rng).unwrap();
        for _ in 0..10 {
            assert_eq!(q.select_action(&obs, 0.0, &mut rng).unwrap(), a);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        // Multinomial oracle: each count ~ Binomial(n, 1/3); allow 3 sigma.
        let q = small(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[q.select_action(&[0.0; 4], 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn target_is_frozen_copy() {
        let mut q = small(6);
        let tgt = sync_target(&q);
        let probe = [0.3, 0.3, -0.1, 0.8];
        assert_eq!(tgt.q_values(&probe).unwrap(), q.q_values(&probe).unwrap());
        let before = tgt.q_values(&probe).unwrap();
        for s in q.param_slices_mut() {
            s.iter_mut().for_each(|x| *x += 0.01);
        }
        assert_eq!(tgt.q_values(&probe).unwrap(), before);
        assert_ne!(q.q_values(&probe).unwrap(), before);
        assert_eq!(sync_target(tgt.network()), tgt);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let q = small(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpts/final.ckpt");
        save_checkpoint(&q, &path, "abc", serde_json::json!({"k": 1})).unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.config_hash, "abc");
        assert_eq!((meta.obs_dim, meta.action_count), (4, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = q.q_values(&probe).unwrap();
            let b = back.q_values(&probe).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
