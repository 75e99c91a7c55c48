//! Training objectives over Q-value rows: margin loss on labels, 1-step and
//! N-step TD, pseudo-label margin, the combined propagation objective and the
//! PVP label loss. Every function has an analytic gradient w.r.t. the Q-values.

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::grad::DenseTensor;
use crate::qfunction::argmax;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_pseudo_weight")]
    pub pseudo_weight: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_n_step")]
    pub n_step: usize,
}

fn default_margin() -> f64 {
    0.05
}
fn default_pseudo_weight() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    0.99
}
fn default_n_step() -> usize {
    20
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { margin: default_margin(), pseudo_weight: default_pseudo_weight(), gamma: default_gamma(), n_step: default_n_step() }
    }
}

/// `max_a [q[a] + l(label, a)] - q[label]` with `l = margin` off the label.
pub fn margin_loss<S: Scalar>(q_row: &[S], label: usize, margin: S) -> S {
    margin_argmax(q_row, label, margin).1
}

/// Returns the maximizing action (ties to the lowest index) and the loss.
fn margin_argmax<S: Scalar>(q_row: &[S], label: usize, margin: S) -> (usize, S) {
    let mut best = 0;
    let mut best_val = S::neg_infinity();
    for (a, &q) in q_row.iter().enumerate() {
        let v = if a == label { q } else { q + margin };
        if v > best_val {
            best = a;
            best_val = v;
        }
    }
    (best, best_val - q_row[label])
}

/// Margin loss and its gradient w.r.t. `q_row`, scaled by `scale`, added into `grad`.
pub fn margin_loss_grad<S: Scalar>(q_row: &[S], label: usize, margin: S, scale: S, grad: &mut [S]) -> S {
    let (best, loss) = margin_argmax(q_row, label, margin);
    if best != label {
        grad[best] += scale;
        grad[label] -= scale;
    }
    loss
}

/// Margin loss against the target network's greedy action. States that carry
/// an actual label must be filtered out by the caller.
pub fn pseudo_margin_loss<S: Scalar>(q_row: &[S], tgt_row: &[S], margin: S, has_label: bool) -> Result<S> {
    if has_label {
        return usage_err("pseudo-label margin evaluated on a state that carries an actual label");
    }
    Ok(margin_loss(q_row, argmax(tgt_row), margin))
}

/// `r + gamma * next_max`, or `r` at a terminal transition.
pub fn td1_target<S: Scalar>(reward: S, done: bool, gamma: S, next_max: S) -> S {
    if done {
        reward
    } else {
        reward + gamma * next_max
    }
}

pub fn td1_loss<S: Scalar>(q_sa: S, reward: S, done: bool, gamma: S, next_max: S) -> S {
    let d = q_sa - td1_target(reward, done, gamma, next_max);
    d * d
}

/// One step of an N-step window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStep<S> {
    pub reward: S,
    pub done: bool,
    pub episode_id: u64,
}

/// `sum_k gamma^k r_k + gamma^len * bootstrap_max` over a contiguous window of
/// at most `n` steps. The bootstrap is dropped when the last step is terminal.
/// A window shorter than `n` is valid only if it ends at a terminal step or at
/// the end of the available data (`bootstrap_max` then covers the cut).
pub fn nstep_target<S: Scalar>(window: &[WindowStep<S>], gamma: S, n: usize, bootstrap_max: S) -> Result<S> {
    if window.is_empty() || window.len() > n {
        return usage_err(format!("n-step window has {} steps, expected 1..={n}", window.len()));
    }
    let episode = window[0].episode_id;
    for (k, step) in window.iter().enumerate() {
        if step.episode_id != episode || (step.done && k + 1 < window.len()) {
            return usage_err(format!("n-step window crosses an episode boundary at offset {k} without truncation"));
        }
    }
    let mut acc = S::zero();
    let mut discount = S::one();
    for step in window {
        acc += discount * step.reward;
        discount *= gamma;
    }
    if window.last().expect("non-empty").done {
        Ok(acc)
    } else {
        Ok(acc + discount * bootstrap_max)
    }
}

pub fn tdn_loss<S: Scalar>(q_sa: S, window: &[WindowStep<S>], gamma: S, n: usize, bootstrap_max: S) -> Result<S> {
    let d = q_sa - nstep_target(window, gamma, n, bootstrap_max)?;
    Ok(d * d)
}

/// `(Q(s, a_L) - 1)^2 + (Q(s, a) + 1)^2`, applied verbatim even when `a == a_L`.
pub fn pvp_loss<S: Scalar>(q_row: &[S], executed: usize, label: usize) -> S {
    let hi = q_row[label] - S::one();
    let lo = q_row[executed] + S::one();
    hi * hi + lo * lo
}

pub fn pvp_loss_grad<S: Scalar>(q_row: &[S], executed: usize, label: usize, scale: S, grad: &mut [S]) -> S {
    let two = S::one() + S::one();
    grad[label] += scale * two * (q_row[label] - S::one());
    grad[executed] += scale * two * (q_row[executed] + S::one());
    pvp_loss(q_row, executed, label)
}

/// Which loss is applied to the label minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelObjective {
    #[default]
    Margin,
    Pvp,
}

/// Inputs for one propagation step. `env_q` and `label_q` are online Q-values
/// (rows = states); the TD targets and pseudo-labels come from the frozen
/// target network and are treated as constants.
#[derive(Debug, Clone, Copy)]
pub struct PropInputs<'a, S> {
    pub env_q: &'a DenseTensor<S>,
    pub env_actions: &'a [usize],
    pub td1_targets: &'a [S],
    pub tdn_targets: &'a [S],
    pub pseudo_labels: &'a [usize],
    pub unlabeled: &'a [bool],
    pub label_q: &'a DenseTensor<S>,
    pub label_actions: &'a [usize],
    /// Executed actions of the label records (used by the PVP objective).
    pub label_executed: &'a [usize],
}

/// Per-term means and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub td1: f64,
    pub tdn: f64,
    pub mg_label: f64,
    pub mg_tgt: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropOutput<S> {
    pub components: LossComponents,
    pub env_q_grad: DenseTensor<S>,
    pub label_q_grad: DenseTensor<S>,
}

/// Coefficients of the four terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub td: f64,
    pub label: f64,
    pub pseudo: f64,
    pub objective: LabelObjective,
}

impl TermWeights {
    /// `td1 + tdn + (1 - w) * label + w * pseudo`.
    pub fn icopro(pseudo_weight: f64) -> Self {
        Self { td: 1.0, label: 1.0 - pseudo_weight, pseudo: pseudo_weight, objective: LabelObjective::Margin }
    }
}

/// Combined objective: mean 1-step TD + mean N-step TD over the env batch,
/// plus the weighted label loss (mean over the label batch) and pseudo-label
/// margin (mean over unlabeled env states). An empty label batch or an env
/// batch without unlabeled states contributes zero for that term.
pub fn combined_prop_loss<S: Scalar>(inputs: &PropInputs<'_, S>, weights: TermWeights, margin: S) -> Result<PropOutput<S>> {
    let b = inputs.env_q.rows();
    let a = inputs.env_q.cols();
    let lens = [
        inputs.env_actions.len(),
        inputs.td1_targets.len(),
        inputs.tdn_targets.len(),
        inputs.pseudo_labels.len(),
        inputs.unlabeled.len(),
    ];
    if lens.iter().any(|&l| l != b) {
        return usage_err(format!("env batch of {b} rows with per-row inputs of lengths {lens:?}"));
    }
    let lb = if inputs.label_q.is_empty() { 0 } else { inputs.label_q.rows() };
    if inputs.label_actions.len() != lb || inputs.label_executed.len() != lb {
        return usage_err("label batch inputs disagree in length");
    }
    if b == 0 {
        return usage_err("empty env minibatch");
    }
    let f = S::from_f64_lossy;
    let two = f(2.0);
    let inv_b = S::one() / f(b as f64);
    let mut env_grad = DenseTensor::zeros(vec![b, a]);
    let (mut td1, mut tdn) = (S::zero(), S::zero());
    let td_scale = f(weights.td) * two * inv_b;
    for i in 0..b {
        let act = inputs.env_actions[i];
        let q = inputs.env_q.row_slice(i)[act];
        let d1 = q - inputs.td1_targets[i];
        let dn = q - inputs.tdn_targets[i];
        td1 += d1 * d1;
        tdn += dn * dn;
        env_grad.row_slice_mut(i)[act] += td_scale * (d1 + dn);
    }
    td1 *= inv_b;
    tdn *= inv_b;

    let n_unlabeled = inputs.unlabeled.iter().filter(|&&u| u).count();
    let mut mg_tgt = S::zero();
    if n_unlabeled > 0 {
        let inv_u = S::one() / f(n_unlabeled as f64);
        let scale = f(weights.pseudo) * inv_u;
        for i in (0..b).filter(|&i| inputs.unlabeled[i]) {
            let label = inputs.pseudo_labels[i];
            let q_row = inputs.env_q.row_slice(i).to_vec();
            mg_tgt += margin_loss_grad(&q_row, label, margin, scale, env_grad.row_slice_mut(i));
        }
        mg_tgt *= inv_u;
    }

    let mut label_grad = DenseTensor::zeros(vec![lb, a]);
    let mut mg_label = S::zero();
    if lb > 0 {
        let inv_l = S::one() / f(lb as f64);
        let scale = f(weights.label) * inv_l;
        for i in 0..lb {
            let q_row = inputs.label_q.row_slice(i).to_vec();
            let (exec, label) = (inputs.label_executed[i], inputs.label_actions[i]);
            let g = label_grad.row_slice_mut(i);
            mg_label += match weights.objective {
                LabelObjective::Margin => margin_loss_grad(&q_row, label, margin, scale, g),
                LabelObjective::Pvp => pvp_loss_grad(&q_row, exec, label, scale, g),
            };
        }
        mg_label *= inv_l;
    } else {
        log::debug!("label buffer empty, label term contributes 0");
    }

    let c = |x: S| x.to_f64_lossless();
    let total = weights.td * (c(td1) + c(tdn)) + weights.label * c(mg_label) + weights.pseudo * c(mg_tgt);
    Ok(PropOutput {
        components: LossComponents { td1: c(td1), tdn: c(tdn), mg_label: c(mg_label), mg_tgt: c(mg_tgt), total },
        env_q_grad: env_grad,
        label_q_grad: label_grad,
    })
}

/// Mean margin loss over a label batch with its gradient (the Align objective).
pub fn align_loss<S: Scalar>(label_q: &DenseTensor<S>, labels: &[usize], margin: S) -> Result<(S, DenseTensor<S>)> {
    let n = label_q.rows();
    if labels.len() != n || n == 0 {
        return usage_err("align batch must be non-empty with one label per row");
    }
    let inv = S::one() / S::from_f64_lossy(n as f64);
    let mut grad = DenseTensor::zeros(vec![n, label_q.cols()]);
    let mut total = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        total += margin_loss_grad(label_q.row_slice(i), label, margin, inv, grad.row_slice_mut(i));
    }
    Ok((total * inv, grad))
}
