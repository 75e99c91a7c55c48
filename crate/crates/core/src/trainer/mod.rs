//! The iterative Collect / Align / Prop trainer, its baselines and ablations,
//! labeler training and evaluation.

mod config;
mod eval;
mod record;

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Method, RainbowConfig, RunConfig, TrainerConfig};
pub use eval::{discounted_return, evaluate, EvalSummary, Greedy, MetricStats, NoisyLabelerPolicy, Policy};
pub use record::{
    read_metrics, read_records, AlignExit, AlignReport, MemorySink, MetricsRow, RunDir, RunRecord, RunSink,
    CHECKPOINT_DIR, CONFIG_FILE, FINAL_CHECKPOINT, LABELS_FILE, METRICS_FILE, RECORDS_FILE,
};

use crate::buffers::{
    sample_minibatches, sample_query_segments, unlabeled_mask, CorrectiveLabel, FeedbackBuffer, Transition,
    TransitionBuffer,
};
use crate::envs::{EnvSpec, Environment, Frame};
use crate::error::{usage_err, Error, Result};
use crate::grad::{clip_grad_norm, AdamConfig, AdamState, DenseTensor};
use crate::labelers::{LabelBridge, Labeler, Query, QueryStep};
use crate::losses::{align_loss, combined_prop_loss, nstep_target, td1_target, LabelObjective, LossComponents, PropInputs, TermWeights, WindowStep};
use crate::qfunction::{argmax, save_checkpoint, sync_target, DuelingQ, QNetConfig, TargetQ};

/// Rows evaluated per target-network forward pass.
const EVAL_CHUNK: usize = 1024;

/// Which phases a method runs each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Schedule {
    align: bool,
    prop: Option<TermWeights>,
    zero_rewards: bool,
}

fn schedule(method: Method, pseudo_weight: f64) -> Schedule {
    let margin_only = |w: f64| TermWeights { td: 1.0, label: 1.0 - w, pseudo: w, objective: LabelObjective::Margin };
    let pvp = TermWeights { td: 1.0, label: 1.0, pseudo: 0.0, objective: LabelObjective::Pvp };
    let (align, prop, zero_rewards) = match method {
        Method::Icopro => (true, Some(margin_only(pseudo_weight)), false),
        Method::Dagger | Method::Bc => (true, None, false),
        Method::Dqfd => (false, Some(margin_only(0.0)), false),
        Method::PvpPlusR => (false, Some(pvp), false),
        Method::PvpMinusR => (false, Some(pvp), true),
        Method::AblateAlign => (false, Some(margin_only(pseudo_weight)), false),
        Method::AblateTgt => (true, Some(margin_only(0.0)), false),
        Method::RainbowLite => (false, Some(TermWeights { td: 1.0, label: 0.0, pseudo: 0.0, objective: LabelObjective::Margin }), false),
    };
    Schedule { align, prop, zero_rewards }
}

/// Final state of a run.
pub struct RunOutcome {
    pub q: DuelingQ<f64>,
    pub feedback: FeedbackBuffer,
    pub records: Vec<RunRecord>,
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<DenseTensor<f64>> {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    DenseTensor::matrix(data.len() / width.max(1), width, data)
}

fn split_rows(t: &DenseTensor<f64>, at: usize) -> Result<(DenseTensor<f64>, DenseTensor<f64>)> {
    let cols = t.cols();
    let (a, b) = t.data().split_at(at * cols);
    Ok((DenseTensor::matrix(at, cols, a.to_vec())?, DenseTensor::matrix(t.rows() - at, cols, b.to_vec())?))
}

fn concat_rows(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> Result<DenseTensor<f64>> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    DenseTensor::matrix(a.rows() + if b.is_empty() { 0 } else { b.rows() }, a.cols(), data)
}

/// Target-network Q-values for many states, evaluated in chunks.
fn target_rows(tgt: &TargetQ<f64>, states: &[&[f64]], width: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(states.len());
    for chunk in states.chunks(EVAL_CHUNK) {
        let q = tgt.q_batch(&stack_rows(chunk.iter().copied(), width)?)?;
        out.extend((0..q.rows()).map(|i| q.row_slice(i).to_vec()));
    }
    Ok(out)
}

fn row_max(row: &[f64]) -> f64 {
    row[argmax(row)]
}

/// Ongoing interaction with the training environment (episodes continue
/// across iterations).
struct Rollout {
    env: Box<dyn Environment>,
    obs: Vec<f64>,
    episode_id: u64,
    timestep: usize,
    needs_reset: bool,
}

impl Rollout {
    fn new(spec: &EnvSpec) -> Result<Self> {
        Ok(Self { env: spec.build()?, obs: Vec::new(), episode_id: 0, timestep: 0, needs_reset: true })
    }
}

/// Shared machinery of every method.
struct Engine<'a> {
    cfg: &'a RunConfig,
    q: DuelingQ<f64>,
    adam: AdamState<f64>,
    rng: ChaCha8Rng,
    buffer: TransitionBuffer,
    feedback: FeedbackBuffer,
    rollout: Rollout,
    env_steps: usize,
    obs_dim: usize,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a RunConfig, batch_size: usize, capacity: usize) -> Result<Self> {
        let t = &cfg.trainer;
        let rollout = Rollout::new(&cfg.env)?;
        let obs_dim = rollout.env.obs_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = QNetConfig {
            obs_dim,
            action_count: rollout.env.action_count(),
            encoder_hidden: t.encoder_hidden.clone(),
            head_hidden: t.head_hidden.clone(),
        };
        let q = DuelingQ::new(net, &mut rng)?;
        let adam = AdamState::new(AdamConfig { alpha: t.lr, ..AdamConfig::for_batch(batch_size) }, &q.param_lengths());
        Ok(Self {
            cfg,
            q,
            adam,
            rng,
            buffer: TransitionBuffer::new(capacity),
            feedback: FeedbackBuffer::new(),
            rollout,
            env_steps: 0,
            obs_dim,
        })
    }

    /// One environment step with an epsilon-greedy action; returns the frame
    /// shown before acting.
    fn env_step(&mut self, iteration: usize, epsilon: f64, keep_frame: bool) -> Result<Option<Frame>> {
        let r = &mut self.rollout;
        if r.needs_reset {
            if self.env_steps > 0 || r.episode_id > 0 {
                r.episode_id += 1;
            }
            r.obs = r.env.reset(self.cfg.episode_seed(r.episode_id));
            r.timestep = 0;
            r.needs_reset = false;
        }
        let frame = keep_frame.then(|| r.env.frame());
        let action = self.q.select_action(&r.obs, epsilon, &mut self.rng)?;
        let out = r.env.step(action)?;
        let state = std::mem::replace(&mut r.obs, out.observation.clone());
        self.buffer.push(Transition {
            state,
            action,
            reward: out.proxy_reward,
            next_state: out.observation,
            done: out.done,
            episode_id: r.episode_id,
            timestep: r.timestep,
            iteration,
        })?;
        r.timestep += 1;
        r.needs_reset = out.done;
        self.env_steps += 1;
        Ok(frame)
    }

    /// Collect phase: a rollout of R steps, then queries and labels.
    fn collect(&mut self, iteration: usize, labeler: &mut dyn Labeler, n_cf: usize, sink: &mut dyn RunSink) -> Result<()> {
        let t = &self.cfg.trainer;
        let steps_before = self.env_steps;
        let mut frames = Vec::with_capacity(t.rollout_len);
        for _ in 0..t.rollout_len {
            frames.push(self.env_step(iteration, t.epsilon, true)?.expect("frame requested"));
        }
        let range = self.buffer.iteration_range(iteration);
        let items = &self.buffer.items()[range.clone()];
        let ids: Vec<u64> = items.iter().map(|x| x.episode_id).collect();
        let segments = sample_query_segments(&ids, t.queries_per_iter, t.segment_len, &mut self.rng);
        let queries: Vec<Query> = segments
            .iter()
            .map(|seg| Query {
                steps: seg
                    .clone()
                    .map(|i| QueryStep {
                        state: items[i].state.clone(),
                        executed_action: items[i].action,
                        frame: frames[i].clone(),
                    })
                    .collect(),
            })
            .collect();
        let answers = labeler.label_batch(&queries)?;
        for (seg, corrections) in segments.iter().zip(answers) {
            for c in corrections.into_iter().take(n_cf) {
                if c.index >= seg.len() {
                    log::warn!("labeler returned index {} outside a {}-step segment; ignored", c.index, seg.len());
                    continue;
                }
                let i = seg.start + c.index;
                let tr = &items[i];
                let label = CorrectiveLabel {
                    state: tr.state.clone(),
                    executed_action: tr.action,
                    label_action: c.action,
                    source: c.source,
                    global_step: (steps_before + i) as u64,
                    episode_id: tr.episode_id,
                    timestep: tr.timestep,
                };
                if self.feedback.push(label.clone()) {
                    sink.label(&label)?;
                }
            }
        }
        Ok(())
    }

    fn label_accuracy(&self, states: &DenseTensor<f64>, labels: &[usize]) -> Result<f64> {
        let q = self.q.q_batch(states)?;
        let hits = labels.iter().enumerate().filter(|&(i, &l)| argmax(q.row_slice(i)) == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    fn apply(&mut self, grads: &crate::qfunction::DuelingGrads<f64>, clip: Option<f64>) -> Result<()> {
        let mut grads = grads.clone();
        if let Some(max) = clip {
            clip_grad_norm(&mut grads.slices_mut(), max);
        }
        self.adam.step(&mut self.q.param_slices_mut(), &grads.slices())
    }

    /// Align phase: margin-loss descent on all labels until accuracy exceeds the
    /// target or the epoch cap is reached.
    fn align(&mut self) -> Result<AlignReport> {
        let t = &self.cfg.trainer;
        self.adam.reset_moments();
        if self.feedback.is_empty() {
            log::warn!("align skipped: no labels yet");
            return Ok(AlignReport { accuracy: 0.0, steps: 0, epochs: 0, exit: AlignExit::NoLabels });
        }
        let labels = self.feedback.labels();
        let states = stack_rows(labels.iter().map(|l| l.state.as_slice()), self.obs_dim)?;
        let actions: Vec<usize> = labels.iter().map(|l| l.label_action).collect();
        let mut accuracy = self.label_accuracy(&states, &actions)?;
        let (mut epochs, mut steps) = (0, 0);
        let mut order: Vec<usize> = (0..actions.len()).collect();
        while accuracy <= t.acc_target && epochs < t.align_max_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(t.batch_size) {
                let x = stack_rows(chunk.iter().map(|&i| states.row_slice(i)), self.obs_dim)?;
                let y: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
                let trace = self.q.forward_traced(&x)?;
                let (loss, dq) = align_loss(trace.q(), &y, t.margin)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical { index: steps, detail: format!("align loss {loss}") });
                }
                let grads = self.q.backward(&trace, &dq)?;
                self.apply(&grads, None)?;
                steps += 1;
            }
            epochs += 1;
            accuracy = self.label_accuracy(&states, &actions)?;
        }
        let exit = if accuracy > t.acc_target { AlignExit::Accuracy } else { AlignExit::Guard };
        if exit == AlignExit::Guard {
            log::warn!("align stopped at the {epochs}-epoch guard with accuracy {accuracy:.4}");
        }
        Ok(AlignReport { accuracy, steps, epochs, exit })
    }

    /// 1-step targets, N-step targets and pseudo-labels for buffer positions
    /// `window` under a frozen target network.
    fn targets(&self, tgt: &TargetQ<f64>, window: Range<usize>, zero_rewards: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        let t = &self.cfg.trainer;
        let items = self.buffer.items();
        let states: Vec<&[f64]> = items[window.clone()].iter().map(|x| x.state.as_slice()).collect();
        let q_states = target_rows(tgt, &states, self.obs_dim)?;
        let pseudo: Vec<usize> = q_states.iter().map(|r| argmax(r)).collect();
        // Reuse the successor's row when its state is this transition's next state.
        let mut next_max = vec![0.0; window.len()];
        let mut missing = Vec::new();
        for (k, p) in window.clone().enumerate() {
            let successor_matches = p + 1 < window.end && items[p + 1].state == items[p].next_state;
            if successor_matches {
                next_max[k] = row_max(&q_states[k + 1]);
            } else {
                missing.push(k);
            }
        }
        let extra: Vec<&[f64]> = missing.iter().map(|&k| items[window.start + k].next_state.as_slice()).collect();
        for (k, row) in missing.iter().zip(target_rows(tgt, &extra, self.obs_dim)?) {
            next_max[*k] = row_max(&row);
        }
        let reward = |x: f64| if zero_rewards { 0.0 } else { x };
        let mut td1 = Vec::with_capacity(window.len());
        let mut tdn = Vec::with_capacity(window.len());
        for (k, p) in window.clone().enumerate() {
            let tr = &items[p];
            td1.push(td1_target(reward(tr.reward), tr.done, t.gamma, next_max[k]));
            let (mut steps, last) = self.buffer.nstep_window(p, t.n_step);
            steps.iter_mut().for_each(|s: &mut WindowStep<f64>| s.reward = reward(s.reward));
            tdn.push(nstep_target(&steps, t.gamma, t.n_step, next_max[last - window.start])?);
        }
        Ok((td1, tdn, pseudo))
    }

    /// One gradient step of the combined objective on env rows `positions`
    /// (with precomputed targets at `window_offsets`) and label rows `label_idx`.
    #[allow(clippy::too_many_arguments)]
    fn prop_step(
        &mut self,
        positions: &[usize],
        td1: &[f64],
        tdn: &[f64],
        pseudo: &[usize],
        label_idx: &[usize],
        weights: TermWeights,
        clip: Option<f64>,
    ) -> Result<LossComponents> {
        let items = self.buffer.items();
        let labels = self.feedback.labels();
        let env_rows = positions.iter().map(|&p| items[p].state.as_slice());
        let label_rows = label_idx.iter().map(|&i| labels[i].state.as_slice());
        let x = stack_rows(env_rows.chain(label_rows), self.obs_dim)?;
        let trace = self.q.forward_traced(&x)?;
        let (env_q, label_q) = split_rows(trace.q(), positions.len())?;
        let env_actions: Vec<usize> = positions.iter().map(|&p| items[p].action).collect();
        let unlabeled = if weights.pseudo > 0.0 {
            unlabeled_mask(positions.iter().map(|&p| (items[p].episode_id, items[p].timestep)), &self.feedback)
        } else {
            vec![false; positions.len()]
        };
        let label_actions: Vec<usize> = label_idx.iter().map(|&i| labels[i].label_action).collect();
        let label_executed: Vec<usize> = label_idx.iter().map(|&i| labels[i].executed_action).collect();
        let inputs = PropInputs {
            env_q: &env_q,
            env_actions: &env_actions,
            td1_targets: td1,
            tdn_targets: tdn,
            pseudo_labels: pseudo,
            unlabeled: &unlabeled,
            label_q: &label_q,
            label_actions: &label_actions,
            label_executed: &label_executed,
        };
        let out = combined_prop_loss(&inputs, weights, self.cfg.trainer.margin)?;
        if !out.components.total.is_finite() {
            return Err(Error::Numerical { index: 0, detail: format!("loss diverged: {:?}", out.components) });
        }
        let dq = concat_rows(&out.env_q_grad, &out.label_q_grad)?;
        let grads = self.q.backward(&trace, &dq)?;
        self.apply(&grads, clip)?;
        Ok(out.components)
    }

    /// Prop phase: E epochs over the recent window, target synced per epoch.
    fn prop(&mut self, iteration: usize, weights: TermWeights, zero_rewards: bool) -> Result<Option<LossComponents>> {
        let t = self.cfg.trainer.clone();
        self.adam.reset_moments();
        let window = self.buffer.recent_window(iteration, t.window_iters);
        let mut sum = LossComponents::default();
        let mut count = 0usize;
        for _ in 0..t.prop_epochs {
            let tgt = sync_target(&self.q);
            let (td1, tdn, pseudo) = self.targets(&tgt, window.clone(), zero_rewards)?;
            for batch in sample_minibatches(window.len(), t.batch_size, &mut self.rng)? {
                let label_idx = if weights.label > 0.0 {
                    self.feedback.sample_indices(batch.len(), &mut self.rng)
                } else {
                    Vec::new()
                };
                let positions: Vec<usize> = batch.iter().map(|&k| window.start + k).collect();
                let pick = |v: &[f64]| batch.iter().map(|&k| v[k]).collect::<Vec<f64>>();
                let ps: Vec<usize> = batch.iter().map(|&k| pseudo[k]).collect();
                let c = self.prop_step(&positions, &pick(&td1), &pick(&tdn), &ps, &label_idx, weights, None)?;
                accumulate(&mut sum, &c);
                count += 1;
            }
        }
        Ok(mean_components(sum, count))
    }

    fn evaluate(&self) -> Result<EvalSummary> {
        let t = &self.cfg.trainer;
        evaluate(&mut Greedy(&self.q), &self.cfg.env, t.eval_episodes, self.cfg.eval_seed())
    }
}

fn accumulate(sum: &mut LossComponents, c: &LossComponents) {
    sum.td1 += c.td1;
    sum.tdn += c.tdn;
    sum.mg_label += c.mg_label;
    sum.mg_tgt += c.mg_tgt;
    sum.total += c.total;
}

fn mean_components(sum: LossComponents, count: usize) -> Option<LossComponents> {
    (count > 0).then(|| {
        let n = count as f64;
        LossComponents { td1: sum.td1 / n, tdn: sum.tdn / n, mg_label: sum.mg_label / n, mg_tgt: sum.mg_tgt / n, total: sum.total / n }
    })
}

/// Optional link to a human labeling session for progress reporting.
#[derive(Clone, Default)]
pub struct RunContext {
    pub bridge: Option<Arc<LabelBridge>>,
}

/// Runs any label-driven method (everything except `rainbow_lite` and `bc`).
fn run_iterative(cfg: &RunConfig, labeler: &mut dyn Labeler, sink: &mut dyn RunSink, ctx: &RunContext) -> Result<RunOutcome> {
    let t = &cfg.trainer;
    let plan = schedule(cfg.method, t.pseudo_weight);
    let n_cf = cfg.labeler.n_cf();
    let mut e = Engine::new(cfg, t.batch_size, t.window_iters * t.rollout_len)?;
    let mut records = Vec::with_capacity(t.total_iters);
    for iteration in 1..=t.total_iters {
        let start = Instant::now();
        if let Some(b) = &ctx.bridge {
            b.set_progress(iteration, t.total_iters, e.feedback.len());
        }
        e.collect(iteration, labeler, n_cf, sink)?;
        let align = if plan.align { Some(e.align()?) } else { None };
        let losses = match plan.prop {
            Some(w) => e.prop(iteration, w, plan.zero_rewards)?,
            None => None,
        };
        e.buffer.compact();
        let record = RunRecord {
            iter: iteration,
            method: cfg.method.name().into(),
            seed: cfg.seed,
            env_steps: e.env_steps,
            labels_total: e.feedback.len(),
            align,
            losses,
            eval: e.evaluate()?,
            wall_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} iter {iteration}/{}: labels {} crash {:.2} speed {:.2}",
            cfg.method.name(),
            t.total_iters,
            record.labels_total,
            record.eval.crash_rate.mean,
            record.eval.speed.mean
        );
        sink.record(&record)?;
        records.push(record);
    }
    if let Some(b) = &ctx.bridge {
        b.set_progress(t.total_iters, t.total_iters, e.feedback.len());
    }
    Ok(RunOutcome { q: e.q, feedback: e.feedback, records })
}

/// Value-only learner with epsilon decay, uniform replay, clipped updates and
/// a periodically synced target network.
struct RainbowLite<'a> {
    e: Engine<'a>,
    rc: RainbowConfig,
    total_steps: usize,
    tgt: TargetQ<f64>,
    updates: usize,
    sum: LossComponents,
    count: usize,
}

impl<'a> RainbowLite<'a> {
    fn new(cfg: &'a RunConfig, total_steps: usize) -> Result<Self> {
        let rc = cfg.trainer.rainbow.clone();
        let e = Engine::new(cfg, rc.batch_size, rc.buffer_size)?;
        let tgt = sync_target(&e.q);
        Ok(Self { e, rc, total_steps, tgt, updates: 0, sum: LossComponents::default(), count: 0 })
    }

    fn advance(&mut self, steps: usize, iteration: usize) -> Result<()> {
        let t = self.e.cfg.trainer.clone();
        for _ in 0..steps {
            let eps = self.rc.epsilon_at(self.e.env_steps, self.total_steps);
            self.e.env_step(iteration, eps, false)?;
            if self.e.env_steps < self.rc.warmup_steps {
                continue;
            }
            for _ in 0..self.rc.updates_per_step {
                self.update(&t)?;
            }
        }
        Ok(())
    }

    fn update(&mut self, t: &TrainerConfig) -> Result<()> {
        let n = self.e.buffer.len();
        let positions: Vec<usize> = (0..self.rc.batch_size).map(|_| self.e.rng.random_range(0..n)).collect();
        let items = self.e.buffer.items();
        let windows: Vec<_> = positions.iter().map(|&p| self.e.buffer.nstep_window(p, t.n_step)).collect();
        let boots: Vec<&[f64]> = positions
            .iter()
            .map(|&p| items[p].next_state.as_slice())
            .chain(windows.iter().map(|(_, last)| items[*last].next_state.as_slice()))
            .collect();
        let rows = target_rows(&self.tgt, &boots, self.e.obs_dim)?;
        let b = positions.len();
        let td1: Vec<f64> = positions
            .iter()
            .enumerate()
            .map(|(k, &p)| td1_target(items[p].reward, items[p].done, t.gamma, row_max(&rows[k])))
            .collect();
        let tdn = windows
            .iter()
            .enumerate()
            .map(|(k, (steps, _))| nstep_target(steps, t.gamma, t.n_step, row_max(&rows[b + k])))
            .collect::<Result<Vec<f64>>>()?;
        let weights = schedule(Method::RainbowLite, 0.0).prop.expect("rainbow has a TD phase");
        let c = self.e.prop_step(&positions, &td1, &tdn, &vec![0; b], &[], weights, Some(self.rc.max_grad_norm))?;
        accumulate(&mut self.sum, &c);
        self.count += 1;
        self.updates += 1;
        if self.updates.is_multiple_of(self.rc.target_update_period) {
            self.tgt = sync_target(&self.e.q);
        }
        Ok(())
    }

    fn take_losses(&mut self) -> Option<LossComponents> {
        let m = mean_components(self.sum, self.count);
        self.sum = LossComponents::default();
        self.count = 0;
        m
    }
}

fn run_rainbow(cfg: &RunConfig, sink: &mut dyn RunSink) -> Result<RunOutcome> {
    let t = &cfg.trainer;
    let mut r = RainbowLite::new(cfg, t.env_steps())?;
    let mut records = Vec::with_capacity(t.total_iters);
    for iteration in 1..=t.total_iters {
        let start = Instant::now();
        r.advance(t.rollout_len, iteration)?;
        let record = RunRecord {
            iter: iteration,
            method: cfg.method.name().into(),
            seed: cfg.seed,
            env_steps: r.e.env_steps,
            labels_total: 0,
            align: None,
            losses: r.take_losses(),
            eval: r.e.evaluate()?,
            wall_s: start.elapsed().as_secs_f64(),
        };
        log::info!("rainbow_lite iter {iteration}/{}: crash {:.2} speed {:.2}", t.total_iters, record.eval.crash_rate.mean, record.eval.speed.mean);
        sink.record(&record)?;
        records.push(record);
    }
    Ok(RunOutcome { q: r.e.q, feedback: FeedbackBuffer::new(), records })
}

/// Behavior cloning on the final label set of a finished run.
fn run_bc(cfg: &RunConfig, base_dir: &Path, sink: &mut dyn RunSink) -> Result<RunOutcome> {
    let Some(source) = &cfg.bc_source else {
        return usage_err("bc needs bc_source");
    };
    let source = base_dir.join(source);
    let file = std::fs::File::open(source.join(LABELS_FILE))?;
    let feedback = FeedbackBuffer::read_jsonl(std::io::BufReader::new(file))?;
    let last = read_metrics(&source.join(METRICS_FILE))?.pop();
    let start = Instant::now();
    let mut e = Engine::new(cfg, cfg.trainer.batch_size, 1)?;
    for label in feedback.labels() {
        sink.label(label)?;
    }
    e.feedback = feedback;
    let align = e.align()?;
    let record = RunRecord {
        iter: last.as_ref().map_or(0, |r| r.iter),
        method: cfg.method.name().into(),
        seed: cfg.seed,
        env_steps: last.as_ref().map_or(0, |r| r.env_steps),
        labels_total: e.feedback.len(),
        align: Some(align),
        losses: None,
        eval: e.evaluate()?,
        wall_s: start.elapsed().as_secs_f64(),
    };
    sink.record(&record)?;
    Ok(RunOutcome { q: e.q, feedback: e.feedback, records: vec![record] })
}

/// Runs `cfg.method` with the given labeler. `base_dir` resolves relative
/// paths in the config (e.g. `bc_source`).
pub fn run(cfg: &RunConfig, labeler: &mut dyn Labeler, sink: &mut dyn RunSink, base_dir: &Path, ctx: &RunContext) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.method {
        Method::RainbowLite => run_rainbow(cfg, sink),
        Method::Bc => run_bc(cfg, base_dir, sink),
        _ => run_iterative(cfg, labeler, sink, ctx),
    }
}

/// Checkpoint context stored in the sidecar so `eval` can reproduce a run's
/// final evaluation.
pub fn checkpoint_extra(cfg: &RunConfig, eval: Option<&EvalSummary>) -> serde_json::Value {
    serde_json::json!({
        "env": cfg.env,
        "method": cfg.method.name(),
        "seed": cfg.seed,
        "eval_seed": cfg.eval_seed(),
        "eval_episodes": cfg.trainer.eval_episodes,
        "metrics": eval,
    })
}

/// Builds the labeler, runs into a run directory and saves the final checkpoint.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path, base_dir: &Path, ctx: &RunContext) -> Result<RunOutcome> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let grid = match &cfg.env {
        EnvSpec::Gridworld { config } => Some(config.clone()),
        EnvSpec::Highway { .. } => None,
    };
    let mut labeler = cfg.labeler.build(base_dir, grid.as_ref(), env.action_names(), ctx.bridge.clone(), cfg.seed.wrapping_add(0x1abe1))?;
    let mut sink = RunDir::create(dir, cfg)?;
    let outcome = match run(cfg, labeler.as_mut(), &mut sink, base_dir, ctx) {
        Ok(o) => o,
        Err(e) => {
            let dump = serde_json::json!({ "error": e.to_string(), "config_hash": cfg.hash() });
            std::fs::write(dir.join("diagnostic.json"), serde_json::to_string_pretty(&dump)?)?;
            return Err(e);
        }
    };
    let last = outcome.records.last().map(|r| &r.eval);
    save_checkpoint(&outcome.q, &sink.final_checkpoint(), &cfg.hash(), checkpoint_extra(cfg, last))?;
    Ok(outcome)
}

/// A labeler checkpoint produced by [`train_labeler_checkpoint`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelerCheckpoint {
    pub steps: usize,
    pub path: std::path::PathBuf,
    pub metrics: EvalSummary,
}

/// Trains a value-only agent for `steps` environment steps and saves
/// checkpoints (with evaluated metrics in their sidecars) at each step count
/// in `snapshots` and at the end.
pub fn train_labeler_checkpoint(cfg: &RunConfig, steps: usize, snapshots: &[usize], out_dir: &Path) -> Result<Vec<LabelerCheckpoint>> {
    cfg.trainer.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut marks: Vec<usize> = snapshots.iter().copied().filter(|&s| s > 0 && s < steps).collect();
    marks.push(steps);
    marks.sort_unstable();
    marks.dedup();
    let mut r = RainbowLite::new(cfg, steps)?;
    let mut saved = Vec::new();
    for mark in marks {
        let todo = mark - r.e.env_steps;
        r.advance(todo, 0)?;
        r.e.buffer.compact();
        let metrics = r.e.evaluate()?;
        let path = out_dir.join(format!("labeler_{mark}.ckpt"));
        save_checkpoint(&r.e.q, &path, &cfg.hash(), checkpoint_extra(cfg, Some(&metrics)))?;
        log::info!("labeler checkpoint at {mark} steps: crash {:.2} speed {:.2}", metrics.crash_rate.mean, metrics.speed.mean);
        saved.push(LabelerCheckpoint { steps: mark, path, metrics });
    }
    std::fs::write(out_dir.join("labelers.json"), serde_json::to_string_pretty(&saved)?)?;
    Ok(saved)
}
