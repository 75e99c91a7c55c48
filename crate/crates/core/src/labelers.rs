//! Sources of corrective actions: Q-diff simulated labelers, the DiffRand
//! corruption wrapper, a shortest-path gridworld oracle and the blocking bridge
//! to a human labeling session.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffers::LabelSource;
use crate::envs::{Frame, Gridworld, GridworldConfig};
use crate::error::{config_err, Result};
use crate::qfunction::{argmax, load_checkpoint, DuelingQ};

/// One step of a query segment.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStep {
    pub state: Vec<f64>,
    pub executed_action: usize,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub steps: Vec<QueryStep>,
}

/// A corrective action at `index` within the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correction {
    pub index: usize,
    pub action: usize,
    pub source: LabelSource,
}

pub trait Labeler: Send {
    /// At most `n_cf` corrections with indices inside the segment; empty to pass.
    fn label(&mut self, query: &Query) -> Result<Vec<Correction>>;

    /// Labels one iteration's queries. Implementations that talk to a person
    /// present the whole batch at once.
    fn label_batch(&mut self, queries: &[Query]) -> Result<Vec<Vec<Correction>>> {
        queries.iter().map(|q| self.label(q)).collect()
    }
}

/// Anything that scores every action in a state.
pub trait ActionValues: Send {
    fn action_values(&self, obs: &[f64]) -> Result<Vec<f64>>;
    fn action_count(&self) -> usize;
}

impl ActionValues for DuelingQ<f64> {
    fn action_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.q_values(obs)
    }

    fn action_count(&self) -> usize {
        DuelingQ::action_count(self)
    }
}

/// Negative shortest-path cost to the goal after taking each action in the
/// gridworld (cliff moves score far below any safe move).
#[derive(Debug, Clone)]
pub struct GridOracle {
    world: Gridworld,
    dist: Vec<Option<usize>>,
}

impl GridOracle {
    pub fn new(config: GridworldConfig) -> Result<Self> {
        let world = Gridworld::new(config)?;
        let dist = world.distances_to_goal();
        Ok(Self { world, dist })
    }

    /// Undiscounted steps of the optimal path from the start cell.
    pub fn optimal_steps(&self) -> Option<usize> {
        let c = self.world.config();
        self.dist[c.start.0 * c.size + c.start.1]
    }
}

impl ActionValues for GridOracle {
    fn action_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let c = self.world.config();
        let Some(cell) = self.world.decode(obs) else {
            return config_err("gridworld oracle needs a one-hot observation");
        };
        Ok((0..4)
            .map(|a| {
                let to = self.world.next_cell(cell, a);
                if c.cliff.contains(&to) {
                    return -1000.0;
                }
                match self.dist[to.0 * c.size + to.1] {
                    Some(d) => -1.0 - d as f64,
                    None => -500.0,
                }
            })
            .collect())
    }

    fn action_count(&self) -> usize {
        4
    }
}

/// Corrects where its own epsilon-greedy action beats the executed one by the
/// largest `Q(s, a_L) - Q(s, a)`.
pub struct SimulatedLabeler {
    values: Box<dyn ActionValues>,
    epsilon: f64,
    n_cf: usize,
    pass_threshold: f64,
    rng: ChaCha8Rng,
}

impl SimulatedLabeler {
    pub fn new(values: Box<dyn ActionValues>, epsilon: f64, n_cf: usize, pass_threshold: f64, seed: u64) -> Self {
        Self { values, epsilon, n_cf, pass_threshold, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Q-diff and suggested action for each step (exposed for tests).
    pub fn score(&mut self, query: &Query) -> Result<Vec<(f64, usize)>> {
        let n = self.values.action_count();
        query
            .steps
            .iter()
            .map(|step| {
                let q = self.values.action_values(&step.state)?;
                let suggested = if self.epsilon > 0.0 && self.rng.random::<f64>() < self.epsilon {
                    self.rng.random_range(0..n)
                } else {
                    argmax(&q)
                };
                Ok((q[suggested] - q[step.executed_action], suggested))
            })
            .collect()
    }
}

/// Indices of the `n` largest scores strictly above `threshold`, best first
/// (ties to the lower index).
pub fn top_k_above(scores: &[f64], n: usize, threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

impl Labeler for SimulatedLabeler {
    fn label(&mut self, query: &Query) -> Result<Vec<Correction>> {
        let scored = self.score(query)?;
        let diffs: Vec<f64> = scored.iter().map(|s| s.0).collect();
        Ok(top_k_above(&diffs, self.n_cf, self.pass_threshold)
            .into_iter()
            .map(|index| Correction { index, action: scored[index].1, source: LabelSource::Simulated })
            .collect())
    }
}

/// Replaces each emitted action, independently with probability `p`, by a
/// uniform action. Indices and label counts are untouched.
pub struct DiffRand {
    inner: Box<dyn Labeler>,
    p: f64,
    action_count: usize,
    rng: ChaCha8Rng,
}

impl DiffRand {
    pub fn new(inner: Box<dyn Labeler>, p: f64, action_count: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return config_err(format!("DiffRand probability {p} outside [0, 1]"));
        }
        Ok(Self { inner, p, action_count, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn corrupt(&mut self, labels: Vec<Correction>) -> Vec<Correction> {
        labels
            .into_iter()
            .map(|c| {
                if self.rng.random::<f64>() < self.p {
                    let action = self.rng.random_range(0..self.action_count);
                    Correction { action, source: LabelSource::RandomCorrupted, ..c }
                } else {
                    c
                }
            })
            .collect()
    }
}

impl Labeler for DiffRand {
    fn label(&mut self, query: &Query) -> Result<Vec<Correction>> {
        let labels = self.inner.label(query)?;
        Ok(self.corrupt(labels))
    }

    fn label_batch(&mut self, queries: &[Query]) -> Result<Vec<Vec<Correction>>> {
        let batch = self.inner.label_batch(queries)?;
        Ok(batch.into_iter().map(|l| self.corrupt(l)).collect())
    }
}

/// Run-config labeler selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelerConfig {
    Simulated {
        checkpoint: PathBuf,
        #[serde(default = "default_n_cf")]
        n_cf: usize,
        #[serde(default)]
        pass_threshold: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Diffrand {
        checkpoint: PathBuf,
        p: f64,
        #[serde(default = "default_n_cf")]
        n_cf: usize,
        #[serde(default)]
        pass_threshold: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Shortest-path labeler for the gridworld.
    GridOracle {
        #[serde(default = "default_n_cf")]
        n_cf: usize,
        #[serde(default)]
        pass_threshold: f64,
        #[serde(default)]
        epsilon: f64,
    },
    Human {
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
    /// No labels (pure RL baselines).
    None,
}

fn default_n_cf() -> usize {
    1
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_timeout() -> f64 {
    600.0
}

/// Labeler that never corrects.
pub struct NoLabeler;

impl Labeler for NoLabeler {
    fn label(&mut self, _: &Query) -> Result<Vec<Correction>> {
        Ok(Vec::new())
    }
}

impl LabelerConfig {
    pub fn n_cf(&self) -> usize {
        match self {
            LabelerConfig::Simulated { n_cf, .. }
            | LabelerConfig::Diffrand { n_cf, .. }
            | LabelerConfig::GridOracle { n_cf, .. } => *n_cf,
            LabelerConfig::Human { .. } => 1,
            LabelerConfig::None => 0,
        }
    }

    /// Builds the labeler. Checkpoint paths are resolved against `base_dir`.
    pub fn build(
        &self,
        base_dir: &std::path::Path,
        grid: Option<&GridworldConfig>,
        action_names: &[&str],
        bridge: Option<Arc<LabelBridge>>,
        seed: u64,
    ) -> Result<Box<dyn Labeler>> {
        let action_count = action_names.len();
        let load = |p: &PathBuf| -> Result<Box<dyn ActionValues>> {
            let (q, _) = load_checkpoint(&base_dir.join(p))?;
            if q.action_count() != action_count {
                return config_err(format!(
                    "labeler checkpoint has {} actions, environment has {action_count}",
                    q.action_count()
                ));
            }
            Ok(Box::new(q))
        };
        Ok(match self {
            LabelerConfig::Simulated { checkpoint, n_cf, pass_threshold, epsilon } => {
                Box::new(SimulatedLabeler::new(load(checkpoint)?, *epsilon, *n_cf, *pass_threshold, seed))
            }
            LabelerConfig::Diffrand { checkpoint, p, n_cf, pass_threshold, epsilon } => {
                let inner = SimulatedLabeler::new(load(checkpoint)?, *epsilon, *n_cf, *pass_threshold, seed);
                Box::new(DiffRand::new(Box::new(inner), *p, action_count, seed ^ 0x5eed)?)
            }
            LabelerConfig::GridOracle { n_cf, pass_threshold, epsilon } => {
                let Some(grid) = grid else {
                    return config_err("grid_oracle labeler requires the gridworld environment");
                };
                let oracle = GridOracle::new(grid.clone())?;
                Box::new(SimulatedLabeler::new(Box::new(oracle), *epsilon, *n_cf, *pass_threshold, seed))
            }
            LabelerConfig::Human { timeout_s } => {
                let Some(bridge) = bridge else {
                    return config_err("human labeler requires a running label service");
                };
                Box::new(HumanLabeler::new(bridge, Duration::from_secs_f64(*timeout_s), action_names))
            }
            LabelerConfig::None => Box::new(NoLabeler),
        })
    }
}

/// One frame as sent to the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    pub ego: crate::envs::VehicleView,
    pub vehicles: Vec<crate::envs::VehicleView>,
    pub executed_action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub segment_id: u64,
    pub frames: Vec<FrameView>,
    pub action_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Label { t: usize, action: usize },
    Pass,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Waiting,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub status: SessionStatus,
    pub pending: usize,
    pub answered: usize,
    pub labels_total: usize,
    pub iteration: usize,
    pub total_iterations: usize,
}

/// Why a submission was refused.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown segment {0}")]
    UnknownSegment(u64),
    #[error("segment {0} already has an outcome")]
    AlreadyResolved(u64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug)]
struct BridgeState {
    session_id: String,
    pending: VecDeque<QueryView>,
    outcomes: HashMap<u64, Outcome>,
    next_id: u64,
    done: bool,
    labels_total: usize,
    iteration: usize,
    total_iterations: usize,
}

/// Exclusive hand-off point between the trainer thread and the label service.
#[derive(Debug)]
pub struct LabelBridge {
    state: Mutex<BridgeState>,
    changed: Condvar,
}

impl LabelBridge {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            state: Mutex::new(BridgeState {
                session_id: session_id.into(),
                pending: VecDeque::new(),
                outcomes: HashMap::new(),
                next_id: 0,
                done: false,
                labels_total: 0,
                iteration: 0,
                total_iterations: 0,
            }),
            changed: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, BridgeState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn info(&self) -> SessionInfo {
        let s = self.lock();
        let status = if s.done {
            SessionStatus::Done
        } else if s.pending.is_empty() {
            SessionStatus::Waiting
        } else {
            SessionStatus::Active
        };
        SessionInfo {
            session_id: s.session_id.clone(),
            status,
            pending: s.pending.len(),
            answered: s.outcomes.values().filter(|o| **o != Outcome::Expired).count(),
            labels_total: s.labels_total,
            iteration: s.iteration,
            total_iterations: s.total_iterations,
        }
    }

    pub fn set_progress(&self, iteration: usize, total_iterations: usize, labels_total: usize) {
        let mut s = self.lock();
        s.iteration = iteration;
        s.total_iterations = total_iterations;
        s.labels_total = labels_total;
    }

    pub fn finish(&self) {
        self.lock().done = true;
        self.changed.notify_all();
    }

    /// Oldest unresolved query, if any.
    pub fn next_query(&self) -> Option<QueryView> {
        self.lock().pending.front().cloned()
    }

    /// The pending query with this id, or the reason a submission for it
    /// would be refused.
    pub fn pending_query(&self, segment_id: u64) -> std::result::Result<QueryView, SubmitError> {
        let s = self.lock();
        if s.outcomes.contains_key(&segment_id) {
            return Err(SubmitError::AlreadyResolved(segment_id));
        }
        s.pending.iter().find(|q| q.segment_id == segment_id).cloned().ok_or(SubmitError::UnknownSegment(segment_id))
    }

    /// Records a human decision. `outcome` must be `Label` or `Pass`.
    pub fn submit(&self, segment_id: u64, outcome: Outcome) -> std::result::Result<(), SubmitError> {
        let mut s = self.lock();
        if s.outcomes.contains_key(&segment_id) {
            return Err(SubmitError::AlreadyResolved(segment_id));
        }
        let Some(pos) = s.pending.iter().position(|q| q.segment_id == segment_id) else {
            return Err(SubmitError::UnknownSegment(segment_id));
        };
        if let Outcome::Label { t, action } = outcome {
            let q = &s.pending[pos];
            if t >= q.frames.len() {
                return Err(SubmitError::Invalid(format!("t = {t} outside [0, {})", q.frames.len())));
            }
            if action >= q.action_names.len() {
                return Err(SubmitError::Invalid(format!("unknown action index {action}")));
            }
        }
        if outcome == Outcome::Expired {
            return Err(SubmitError::Invalid("expired is not a submittable outcome".into()));
        }
        s.pending.remove(pos);
        s.outcomes.insert(segment_id, outcome);
        drop(s);
        self.changed.notify_all();
        Ok(())
    }

    /// Enqueues a batch and blocks until every query has an outcome or the
    /// timeout passes; unresolved queries are withdrawn and marked expired.
    pub fn ask(&self, queries: Vec<(Vec<FrameView>, Vec<String>)>, timeout: Duration) -> Vec<Outcome> {
        let mut s = self.lock();
        let ids: Vec<u64> = queries
            .into_iter()
            .map(|(frames, action_names)| {
                let segment_id = s.next_id;
                s.next_id += 1;
                s.pending.push_back(QueryView { segment_id, frames, action_names });
                segment_id
            })
            .collect();
        let deadline = Instant::now() + timeout;
        while ids.iter().any(|id| !s.outcomes.contains_key(id)) {
            let now = Instant::now();
            if now >= deadline {
                log::warn!("label session timed out; unanswered queries are skipped");
                for id in &ids {
                    s.outcomes.entry(*id).or_insert(Outcome::Expired);
                }
                s.pending.retain(|q| !ids.contains(&q.segment_id));
                break;
            }
            s = self.changed.wait_timeout(s, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
        ids.iter().map(|id| s.outcomes[id]).collect()
    }
}

/// Presents segments to a person through the [`LabelBridge`].
pub struct HumanLabeler {
    bridge: Arc<LabelBridge>,
    timeout: Duration,
    action_names: Vec<String>,
}

impl HumanLabeler {
    pub fn new(bridge: Arc<LabelBridge>, timeout: Duration, action_names: &[&str]) -> Self {
        Self { bridge, timeout, action_names: action_names.iter().map(|s| s.to_string()).collect() }
    }
}

fn frames_of(query: &Query) -> Vec<FrameView> {
    query
        .steps
        .iter()
        .map(|s| FrameView { ego: s.frame.ego, vehicles: s.frame.vehicles.clone(), executed_action: s.executed_action })
        .collect()
}

impl Labeler for HumanLabeler {
    fn label(&mut self, query: &Query) -> Result<Vec<Correction>> {
        Ok(self.label_batch(std::slice::from_ref(query))?.pop().unwrap_or_default())
    }

    fn label_batch(&mut self, queries: &[Query]) -> Result<Vec<Vec<Correction>>> {
        let asks = queries.iter().map(|q| (frames_of(q), self.action_names.clone())).collect();
        let outcomes = self.bridge.ask(asks, self.timeout);
        Ok(outcomes
            .into_iter()
            .map(|o| match o {
                Outcome::Label { t, action } => vec![Correction { index: t, action, source: LabelSource::Human }],
                Outcome::Pass | Outcome::Expired => Vec::new(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{VehicleView, HIGHWAY_ACTION_NAMES};

    /// Fixed per-state action values keyed by the first observation entry.
    struct Table(Vec<Vec<f64>>);

    impl ActionValues for Table {
        fn action_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0[obs[0] as usize].clone())
        }
        fn action_count(&self) -> usize {
            self.0[0].len()
        }
    }

    fn frame() -> Frame {
        Frame { ego: VehicleView { lane: 0, x: 0.0, speed: 20.0 }, vehicles: vec![] }
    }

    fn query(executed: &[usize]) -> Query {
        Query {
            steps: executed
                .iter()
                .enumerate()
                .map(|(i, &a)| QueryStep { state: vec![i as f64], executed_action: a, frame: frame() })
                .collect(),
        }
    }

    #[test]
    fn passes_when_nothing_improves() {
        let table = Table(vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let mut l = SimulatedLabeler::new(Box::new(table), 0.0, 1, 0.0, 0);
        assert!(l.label(&query(&[0, 1])).unwrap().is_empty());
    }

    #[test]
    fn picks_largest_q_diff() {
        // Executed action 0 everywhere; Q-diff = [0.3, 0.7].
        let table = Table(vec![vec![0.0, 0.3], vec![0.0, 0.7]]);
        let mut l = SimulatedLabeler::new(Box::new(table), 0.0, 1, 0.0, 0);
        let c = l.label(&query(&[0, 0])).unwrap();
        assert_eq!(c, vec![Correction { index: 1, action: 1, source: LabelSource::Simulated }]);
        assert_eq!(top_k_above(&[0.3, 0.7, -0.1], 2, 0.0), vec![1, 0]);
        assert!(top_k_above(&[0.0, -1.0], 2, 0.0).is_empty());
    }

    #[test]
    fn grid_oracle_prefers_shortest_safe_move() {
        let cfg = GridworldConfig::default();
        let oracle = GridOracle::new(cfg.clone()).unwrap();
        let world = Gridworld::new(cfg).unwrap();
        // From the start, RIGHT steps onto the cliff and UP is the only safe progress.
        let q = oracle.action_values(&world.encode((7, 0))).unwrap();
        assert_eq!(argmax(&q), 0);
        assert!(q[3] < -999.0);
        assert!(oracle.optimal_steps().unwrap() >= 9);
    }

    struct Fixed(Vec<Correction>);

    impl Labeler for Fixed {
        fn label(&mut self, _: &Query) -> Result<Vec<Correction>> {
            Ok(self.0.clone())
        }
    }

    fn fixed() -> Box<dyn Labeler> {
        Box::new(Fixed(vec![Correction { index: 2, action: 0, source: LabelSource::Simulated }]))
    }

    #[test]
    fn diffrand_zero_is_identity() {
        let mut d = DiffRand::new(fixed(), 0.0, 5, 1).unwrap();
        let q = query(&[0; 3]);
        let expected = fixed().label(&q).unwrap();
        for _ in 0..100 {
            assert_eq!(d.label(&q).unwrap(), expected);
        }
        assert!(DiffRand::new(fixed(), 1.5, 5, 1).is_err());
    }

    #[test]
    fn diffrand_replacement_rate() {
        // Binomial oracle: replacements are 0.25 n +- 0.02 n for n = 10k.
        let mut d = DiffRand::new(fixed(), 0.25, 5, 2).unwrap();
        let q = query(&[0; 3]);
        let n = 10_000;
        let replaced = (0..n)
            .filter(|_| {
                let c = d.label(&q).unwrap();
                assert_eq!((c.len(), c[0].index), (1, 2));
                c[0].source == LabelSource::RandomCorrupted
            })
            .count();
        assert!((replaced as f64 / n as f64 - 0.25).abs() < 0.02, "{replaced}");
    }

    #[test]
    fn diffrand_full_corruption_is_uniform() {
        let mut d = DiffRand::new(fixed(), 1.0, 5, 3).unwrap();
        let q = query(&[0; 3]);
        let n = 50_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[d.label(&q).unwrap()[0].action] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - n as f64 * p).abs() < 3.0 * sigma), "{counts:?}");
    }

    fn view(t: usize) -> (Vec<FrameView>, Vec<String>) {
        let f = FrameView { ego: frame().ego, vehicles: vec![], executed_action: 4 };
        (vec![f; t], HIGHWAY_ACTION_NAMES.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn bridge_hand_off() {
        let bridge = Arc::new(LabelBridge::new("s"));
        let b2 = Arc::clone(&bridge);
        let worker = std::thread::spawn(move || b2.ask(vec![view(10), view(10)], Duration::from_secs(30)));
        let first = loop {
            if let Some(q) = bridge.next_query() {
                break q;
            }
            std::thread::sleep(Duration::from_millis(1));
        };
        assert_eq!(bridge.submit(first.segment_id, Outcome::Label { t: 10, action: 0 }), Err(SubmitError::Invalid("t = 10 outside [0, 10)".into())));
        assert!(matches!(bridge.submit(first.segment_id, Outcome::Label { t: 0, action: 5 }), Err(SubmitError::Invalid(_))));
        bridge.submit(first.segment_id, Outcome::Label { t: 3, action: 0 }).unwrap();
        assert_eq!(bridge.submit(first.segment_id, Outcome::Pass), Err(SubmitError::AlreadyResolved(first.segment_id)));
        let second = bridge.next_query().unwrap();
        assert_ne!(second.segment_id, first.segment_id);
        assert_eq!(bridge.submit(99, Outcome::Pass), Err(SubmitError::UnknownSegment(99)));
        bridge.submit(second.segment_id, Outcome::Pass).unwrap();
        let outcomes = worker.join().unwrap();
        assert_eq!(outcomes, vec![Outcome::Label { t: 3, action: 0 }, Outcome::Pass]);
        assert_eq!(bridge.info().status, SessionStatus::Waiting);
    }

    #[test]
    fn bridge_timeout_yields_empty() {
        let bridge = Arc::new(LabelBridge::new("s"));
        let mut human = HumanLabeler::new(Arc::clone(&bridge), Duration::from_millis(20), &HIGHWAY_ACTION_NAMES);
        let out = human.label(&query(&[0, 1])).unwrap();
        assert!(out.is_empty());
        assert!(bridge.next_query().is_none());
        assert_eq!(bridge.submit(0, Outcome::Pass), Err(SubmitError::AlreadyResolved(0)));
    }
}
