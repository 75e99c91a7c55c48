//! Adam with bias correction and resettable moments.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::scalar::Scalar;

/// Optimizer hyper-parameters. Defaults: `alpha = 1e-4`, betas `(0.9, 0.999)`,
/// `eps = 0.01 / 128`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Default settings with `eps = 0.01 / batch_size`.
    pub fn for_batch(batch_size: usize) -> Self {
        Self { alpha: 1e-4, beta1: 0.9, beta2: 0.999, eps: 0.01 / batch_size.max(1) as f64 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::for_batch(128)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step_count: u64,
    config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state for parameters with the given slice lengths.
    pub fn new(config: AdamConfig, param_lengths: &[usize]) -> Self {
        Self {
            m: param_lengths.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: param_lengths.iter().map(|&n| vec![S::zero(); n]).collect(),
            step_count: 0,
            config,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moments(&self) -> &[Vec<S>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.v
    }

    /// Zeroes both moment estimates and the step counter; hyper-parameters stay.
    pub fn reset_moments(&mut self) {
        for buf in self.m.iter_mut().chain(self.v.iter_mut()) {
            buf.iter_mut().for_each(|x| *x = S::zero());
        }
        self.step_count = 0;
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Gradients are validated before anything is mutated; a non-finite entry
    /// yields [`Error::Numerical`] carrying its flat index across all slices.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[&[S]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return config_err(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        let mut offset = 0;
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != p.len() {
                return config_err(format!("tensor {k}: parameter/gradient length mismatch"));
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical {
                    index: offset + i,
                    detail: format!("non-finite gradient {}", g[i]),
                });
            }
            offset += g.len();
        }

        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let beta1 = S::from_f64_lossy(c.beta1);
        let beta2 = S::from_f64_lossy(c.beta2);
        let one = S::one();
        let bias1 = one - beta1.powi(t);
        let bias2_sqrt = (one - beta2.powi(t)).sqrt();
        let step_size = S::from_f64_lossy(c.alpha) / bias1;
        let eps = S::from_f64_lossy(c.eps);

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (one - beta1) * gi;
                v[i] = beta2 * v[i] + (one - beta2) * gi * gi;
                let denom = v[i].sqrt() / bias2_sqrt + eps;
                p[i] -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [&mut [S]], max_norm: S) -> S {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|&x| x * x).sum::<S>())
        .sum::<S>()
        .sqrt();
    if norm > max_norm && norm > S::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}
