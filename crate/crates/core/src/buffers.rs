//! Replay storage: the transition buffer with its recent-iterations window and
//! N-step views, the feedback (label) buffer with JSON-lines persistence, and
//! query segment sampling.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Error, Result};
use crate::losses::WindowStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub episode_id: u64,
    /// Step index within the episode.
    pub timestep: usize,
    /// Training iteration that collected this transition.
    pub iteration: usize,
}

/// Ring of transitions in collection order. Iteration tags must be monotone.
#[derive(Debug, Clone)]
pub struct TransitionBuffer {
    items: Vec<Transition>,
    capacity: usize,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::new(), capacity: capacity.max(1) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    pub fn get(&self, pos: usize) -> &Transition {
        &self.items[pos]
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if let Some(last) = self.items.last() {
            if t.iteration < last.iteration {
                return usage_err(format!(
                    "transition tagged iteration {} after iteration {}",
                    t.iteration, last.iteration
                ));
            }
        }
        self.items.push(t);
        if self.items.len() >= 2 * self.capacity {
            self.compact();
        }
        Ok(())
    }

    /// Drops the oldest entries beyond capacity.
    pub fn compact(&mut self) {
        if self.items.len() > self.capacity {
            let excess = self.items.len() - self.capacity;
            self.items.drain(..excess);
        }
    }

    /// Positions of all transitions from the `k` most recent iterations, i.e.
    /// tagged in `(current_iter - k, current_iter]`.
    pub fn recent_window(&self, current_iter: usize, k: usize) -> Range<usize> {
        let lo = (current_iter + 1).saturating_sub(k.max(1));
        let start = self.items.partition_point(|t| t.iteration < lo);
        let end = self.items.partition_point(|t| t.iteration <= current_iter);
        start..end
    }

    /// Positions tagged exactly `iter`.
    pub fn iteration_range(&self, iter: usize) -> Range<usize> {
        let start = self.items.partition_point(|t| t.iteration < iter);
        let end = self.items.partition_point(|t| t.iteration <= iter);
        start..end
    }

    /// Up to `n` consecutive steps starting at `pos`, stopping after a terminal
    /// step, at an episode change or at the end of the buffer. Returns the steps
    /// and the position whose `next_state` provides the bootstrap.
    pub fn nstep_window(&self, pos: usize, n: usize) -> (Vec<WindowStep<f64>>, usize) {
        let first = &self.items[pos];
        let mut steps = Vec::with_capacity(n);
        let mut last = pos;
        for p in pos..(pos + n).min(self.items.len()) {
            let t = &self.items[p];
            if t.episode_id != first.episode_id {
                break;
            }
            steps.push(WindowStep { reward: t.reward, done: t.done, episode_id: t.episode_id });
            last = p;
            if t.done {
                break;
            }
        }
        (steps, last)
    }
}

/// Shuffles `len` positions and splits them into full minibatches (the
/// partial remainder is dropped).
pub fn sample_minibatches<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return usage_err("cannot sample minibatches from an empty window");
    }
    if batch_size == 0 {
        return usage_err("batch size must be positive");
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Simulated,
    Human,
    RandomCorrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectiveLabel {
    pub state: Vec<f64>,
    pub executed_action: usize,
    pub label_action: usize,
    pub source: LabelSource,
    pub global_step: u64,
    pub episode_id: u64,
    pub timestep: usize,
}

impl CorrectiveLabel {
    pub fn slot(&self) -> (u64, usize) {
        (self.episode_id, self.timestep)
    }
}

/// Append-only label store with at most one label per (episode, timestep).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackBuffer {
    labels: Vec<CorrectiveLabel>,
    slots: HashSet<(u64, usize)>,
}

impl FeedbackBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[CorrectiveLabel] {
        &self.labels
    }

    pub fn contains(&self, episode_id: u64, timestep: usize) -> bool {
        self.slots.contains(&(episode_id, timestep))
    }

    /// Appends a label; returns `false` (and stores nothing) if its slot is taken.
    pub fn push(&mut self, label: CorrectiveLabel) -> bool {
        if !self.slots.insert(label.slot()) {
            return false;
        }
        self.labels.push(label);
        true
    }

    /// `n` indices drawn uniformly with replacement; empty when the buffer is.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.labels.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.labels.len())).collect()
    }

    pub fn write_jsonl_line<W: Write>(label: &CorrectiveLabel, out: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *out, label)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for label in &self.labels {
            Self::write_jsonl_line(label, &mut out)?;
        }
        Ok(())
    }

    /// Rebuilds a buffer from JSON lines (blank lines are skipped).
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut buf = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let label: CorrectiveLabel = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("labels line {}: {e}", i + 1)))?;
            if !buf.push(label) {
                return Err(Error::Format(format!("labels line {}: duplicate (episode, timestep) slot", i + 1)));
            }
        }
        Ok(buf)
    }
}

/// Samples up to `m` pairwise-disjoint windows of `t` consecutive positions,
/// none spanning an episode boundary. Each pick is uniform over the starts that
/// remain valid after the previous picks. Fewer than `m` segments are returned
/// (with a warning) when no valid start is left.
pub fn sample_query_segments<R: Rng + ?Sized>(episode_ids: &[u64], m: usize, t: usize, rng: &mut R) -> Vec<Range<usize>> {
    let n = episode_ids.len();
    let mut taken = vec![false; n];
    let mut segments = Vec::with_capacity(m);
    if t == 0 || t > n {
        if m > 0 {
            log::warn!("no room for a {t}-step segment in a rollout of {n} steps");
        }
        return segments;
    }
    let valid = |s: usize, taken: &[bool]| {
        (s..s + t).all(|i| !taken[i] && episode_ids[i] == episode_ids[s])
    };
    while segments.len() < m {
        let starts: Vec<usize> = (0..=n - t).filter(|&s| valid(s, &taken)).collect();
        if starts.is_empty() {
            log::warn!("only {} of {m} query segments fit the rollout", segments.len());
            break;
        }
        let s = starts[rng.random_range(0..starts.len())];
        taken[s..s + t].iter_mut().for_each(|x| *x = true);
        segments.push(s..s + t);
    }
    segments
}

/// `true` exactly where the slot carries no actual label.
pub fn unlabeled_mask<'a, I>(slots: I, feedback: &FeedbackBuffer) -> Vec<bool>
where
    I: IntoIterator<Item = (u64, usize)> + 'a,
{
    slots.into_iter().map(|(e, t)| !feedback.contains(e, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(episode_id: u64, timestep: usize, iteration: usize, done: bool) -> Transition {
        Transition {
            state: vec![timestep as f64],
            action: 0,
            reward: 1.0,
            next_state: vec![timestep as f64 + 1.0],
            done,
            episode_id,
            timestep,
            iteration,
        }
    }

    fn label(episode_id: u64, timestep: usize) -> CorrectiveLabel {
        CorrectiveLabel {
            state: vec![0.1 * timestep as f64, 1.0 / 3.0],
            executed_action: 1,
            label_action: 2,
            source: LabelSource::Simulated,
            global_step: timestep as u64,
            episode_id,
            timestep,
        }
    }

    #[test]
    fn window_bounds() {
        let mut b = TransitionBuffer::new(100);
        for it in 0..6 {
            for k in 0..3 {
                b.push(tr(0, it * 3 + k, it, false)).unwrap();
            }
        }
        assert_eq!(b.recent_window(1, 3), 0..6);
        assert_eq!(b.recent_window(5, 10), 0..18);
        // K = 3 at iteration 5 keeps iterations 3..=5 and drops iteration 2.
        let w = b.recent_window(5, 3);
        assert_eq!(w, 9..18);
        assert_eq!(b.get(w.start).iteration, 3);
        assert_eq!(b.recent_window(5, 1), b.iteration_range(5));
        assert!(b.push(tr(0, 99, 4, false)).is_err());
    }

    #[test]
    fn ring_keeps_newest() {
        let mut b = TransitionBuffer::new(4);
        for i in 0..10 {
            b.push(tr(0, i, i, false)).unwrap();
        }
        b.compact();
        assert_eq!(b.len(), 4);
        assert_eq!(b.get(0).timestep, 6);
    }

    #[test]
    fn nstep_window_truncates() {
        let mut b = TransitionBuffer::new(100);
        for i in 0..4 {
            b.push(tr(0, i, 0, i == 3)).unwrap();
        }
        for i in 0..3 {
            b.push(tr(1, i, 0, false)).unwrap();
        }
        let (w, last) = b.nstep_window(1, 5);
        assert_eq!((w.len(), last), (3, 3));
        assert!(w.last().unwrap().done);
        // Buffer end: partial window bootstrapped from the last stored step.
        let (w, last) = b.nstep_window(5, 5);
        assert_eq!((w.len(), last), (2, 6));
        let (w, _) = b.nstep_window(0, 2);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn minibatches_drop_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = sample_minibatches(100_000, 128, &mut rng).unwrap();
        assert_eq!(batches.len(), 781);
        let mut seen = vec![0u8; 100_000];
        for i in batches.iter().flatten() {
            seen[*i] += 1;
        }
        assert_eq!(seen.iter().filter(|&&c| c == 1).count(), 781 * 128);
        assert!(seen.iter().all(|&c| c <= 1));
        assert!(sample_minibatches(0, 128, &mut rng).is_err());
    }

    #[test]
    fn single_label_repeats() {
        let mut fb = FeedbackBuffer::new();
        fb.push(label(0, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(fb.sample_indices(128, &mut rng), vec![0; 128]);
        assert!(FeedbackBuffer::new().sample_indices(4, &mut rng).is_empty());
    }

    #[test]
    fn duplicate_slots_rejected() {
        let mut fb = FeedbackBuffer::new();
        assert!(fb.push(label(3, 4)));
        let mut again = label(3, 4);
        again.label_action = 0;
        assert!(!fb.push(again));
        assert_eq!(fb.len(), 1);
        assert_eq!(fb.labels()[0].label_action, 2);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut fb = FeedbackBuffer::new();
        for i in 0..5 {
            fb.push(label(i, i as usize * 7));
        }
        let mut bytes = Vec::new();
        fb.write_jsonl(&mut bytes).unwrap();
        let back = FeedbackBuffer::read_jsonl(bytes.as_slice()).unwrap();
        assert_eq!(back, fb);
        let dup = [bytes.clone(), bytes].concat();
        assert!(FeedbackBuffer::read_jsonl(dup.as_slice()).is_err());
    }

    #[test]
    fn segment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_query_segments(&[0; 10], 1, 10, &mut rng), vec![0..10]);
        let segs = sample_query_segments(&[0; 1000], 10, 10, &mut rng);
        assert_eq!(segs.len(), 10);
        // Boundary at index 5: the only 10-step segments lie in the second episode.
        let ids: Vec<u64> = (0..20).map(|i| u64::from(i >= 5)).collect();
        for _ in 0..50 {
            let s = sample_query_segments(&ids, 1, 10, &mut rng);
            assert!(s[0].start >= 5);
        }
        // Only one fits: partial result.
        assert_eq!(sample_query_segments(&[0; 15], 3, 10, &mut rng).len(), 1);
    }

    #[test]
    fn mask_examples() {
        let mut fb = FeedbackBuffer::new();
        let slots: Vec<(u64, usize)> = (0..8).map(|t| (0, t)).collect();
        assert!(unlabeled_mask(slots.iter().copied(), &fb).iter().all(|&m| m));
        for t in [1, 4, 6] {
            fb.push(label(0, t));
        }
        let mask = unlabeled_mask(slots.iter().copied(), &fb);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 5);
        for t in 0..8 {
            fb.push(label(0, t));
        }
        assert!(unlabeled_mask(slots.iter().copied(), &fb).iter().all(|&m| !m));
    }

    proptest! {
        #[test]
        fn segments_are_disjoint_and_within_episodes(
            lengths in proptest::collection::vec(1usize..40, 1..12),
            m in 1usize..12,
            t in 1usize..12,
            seed in any::<u64>(),
        ) {
            let ids: Vec<u64> = lengths.iter().enumerate().flat_map(|(e, &l)| std::iter::repeat_n(e as u64, l)).collect();
            let segs = sample_query_segments(&ids, m, t, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(segs.len() <= m);
            let mut used = vec![false; ids.len()];
            for s in &segs {
                prop_assert_eq!(s.len(), t);
                prop_assert!(s.clone().all(|i| ids[i] == ids[s.start]));
                for i in s.clone() {
                    prop_assert!(!used[i]);
                    used[i] = true;
                }
            }
        }
    }
}
