//! Proportional prioritized replay over short trajectory segments.
//!
//! One priority per stored [`Trajectory`]. Slots are drawn with replacement
//! with probability `p_i^α / Σ_k p_k^α`, and each draw carries the
//! importance-sampling weight `(1/(N·P(i)))^β` scaled by the largest weight in
//! the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to every loss before it becomes a priority so that no priority is zero.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: usize,
    pub reward: f64,
    pub next_state: [f64; 4],
    pub done: bool,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        if self.action > 1 {
            return Err(Error::Argument(format!("action {} out of range", self.action)));
        }
        let finite = self
            .state
            .iter()
            .chain(&self.next_state)
            .chain(std::iter::once(&self.reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                what: "transition",
                index: 0,
            });
        }
        Ok(())
    }
}

/// A contiguous run of 1..=S transitions from a single episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, max_len: usize) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::Argument("empty trajectory".into()));
        }
        if transitions.len() > max_len {
            return Err(Error::Argument(format!(
                "trajectory of {} steps exceeds segment length {max_len}",
                transitions.len()
            )));
        }
        for t in &transitions {
            t.validate()?;
        }
        if transitions[..transitions.len() - 1].iter().any(|t| t.done) {
            return Err(Error::Argument(
                "terminal transition before the end of a trajectory".into(),
            ));
        }
        Ok(Self { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Identifies one stored trajectory by insertion order. Becomes stale once
/// that trajectory has been evicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReplayIndex(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub per_alpha: f64,
    pub per_beta: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            per_alpha: 0.6,
            per_beta: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trajectories: Vec<Trajectory>,
    pub indices: Vec<ReplayIndex>,
    /// Normalized IS weights, each in (0, 1].
    pub weights: Vec<f64>,
    /// `P(i)` of each draw.
    pub probabilities: Vec<f64>,
}

/// Binary sum tree over `capacity` leaves. Internal nodes are always
/// recomputed from their children, so the root never drifts.
#[derive(Debug, Clone)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, slot: usize) -> f64 {
        self.nodes[self.leaves + slot]
    }

    fn set(&mut self, slot: usize, value: f64) {
        let mut i = self.leaves + slot;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`, skipping zero leaves.
    fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if mass < left {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        let mut slot = i - self.leaves;
        // Rounding can push `mass` past the last nonzero leaf.
        while self.get(slot) <= 0.0 && slot > 0 {
            slot -= 1;
        }
        slot
    }
}

/// A fixed-capacity FIFO ring of prioritized trajectories.
#[derive(Debug, Clone)]
pub struct PrioritizedMemory {
    config: ReplayConfig,
    slots: Vec<Option<(Trajectory, f64)>>,
    tree: SumTree,
    pushed: u64,
    max_priority: f64,
}

impl PrioritizedMemory {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(config.per_alpha >= 0.0 && config.per_beta >= 0.0)
            || !config.per_alpha.is_finite()
            || !config.per_beta.is_finite()
        {
            return Err(Error::Config(format!(
                "prioritization exponents must be finite and non-negative, got alpha {} beta {}",
                config.per_alpha, config.per_beta
            )));
        }
        Ok(Self {
            config,
            slots: vec![None; config.capacity],
            tree: SumTree::new(config.capacity),
            pushed: 0,
            max_priority: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        (self.pushed as usize).min(self.config.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.pushed == 0
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Cached `Σ p_i^α`.
    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    /// `Σ p_i^α` recomputed from the stored priorities.
    pub fn recompute_mass(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|(_, p)| p.powf(self.config.per_alpha))
            .sum()
    }

    fn slot_of(&self, index: ReplayIndex) -> Result<usize> {
        let oldest = self.pushed.saturating_sub(self.config.capacity as u64);
        if index.0 >= self.pushed || index.0 < oldest {
            return Err(Error::State(format!(
                "replay index {} is not live (live range {oldest}..{})",
                index.0, self.pushed
            )));
        }
        Ok((index.0 % self.config.capacity as u64) as usize)
    }

    /// Stored trajectory and priority for a live index.
    pub fn get(&self, index: ReplayIndex) -> Result<(&Trajectory, f64)> {
        let slot = self.slot_of(index)?;
        let (t, p) = self.slots[slot].as_ref().expect("live slots are occupied");
        Ok((t, *p))
    }

    /// Inserts at the current max priority, evicting the oldest entry when full.
    pub fn push(&mut self, trajectory: Trajectory) -> Result<ReplayIndex> {
        if trajectory.is_empty() {
            return Err(Error::Argument("empty trajectory".into()));
        }
        let index = ReplayIndex(self.pushed);
        let slot = (self.pushed % self.config.capacity as u64) as usize;
        let priority = self.max_priority;
        self.slots[slot] = Some((trajectory, priority));
        self.tree.set(slot, priority.powf(self.config.per_alpha));
        self.pushed += 1;
        Ok(index)
    }

    /// Draws `batch` trajectories with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Sample> {
        if self.is_empty() {
            return Err(Error::State("cannot sample from an empty replay memory".into()));
        }
        let total = self.tree.total();
        let size = self.len() as f64;
        let oldest = self.pushed.saturating_sub(self.config.capacity as u64);
        let capacity = self.config.capacity as u64;

        let mut out = Sample {
            trajectories: Vec::with_capacity(batch),
            indices: Vec::with_capacity(batch),
            weights: Vec::with_capacity(batch),
            probabilities: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            let slot = self.tree.find(rng.gen::<f64>() * total);
            let (trajectory, _) = self.slots[slot].as_ref().expect("sampled slots are occupied");
            let probability = self.tree.get(slot) / total;
            // Recover the insertion index that currently owns this slot.
            let base = oldest - oldest % capacity;
            let mut id = base + slot as u64;
            if id < oldest {
                id += capacity;
            }
            out.trajectories.push(trajectory.clone());
            out.indices.push(ReplayIndex(id));
            out.probabilities.push(probability);
            out.weights
                .push((1.0 / (size * probability)).powf(self.config.per_beta));
        }
        let max_w = out.weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut out.weights {
            *w /= max_w;
        }
        Ok(out)
    }

    /// Sets `p_i = loss_i + PRIORITY_FLOOR` for each sampled index. All
    /// inputs are validated before anything changes.
    pub fn update_priorities(&mut self, indices: &[ReplayIndex], losses: &[f64]) -> Result<()> {
        if indices.len() != losses.len() {
            return Err(Error::Argument(format!(
                "{} indices but {} losses",
                indices.len(),
                losses.len()
            )));
        }
        let mut slots = Vec::with_capacity(indices.len());
        for (&index, &loss) in indices.iter().zip(losses) {
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "priority loss",
                    index: index.0 as usize,
                });
            }
            if loss < 0.0 {
                return Err(Error::Argument(format!("negative loss {loss}")));
            }
            slots.push(self.slot_of(index)?);
        }
        for (slot, &loss) in slots.into_iter().zip(losses) {
            let priority = loss + PRIORITY_FLOOR;
            if let Some((_, p)) = self.slots[slot].as_mut() {
                *p = priority;
            }
            self.tree.set(slot, priority.powf(self.config.per_alpha));
            self.max_priority = self.max_priority.max(priority);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(tag: f64) -> Trajectory {
        Trajectory::new(
            vec![Transition {
                state: [tag, 0.0, 0.0, 0.0],
                action: 0,
                reward: 1.0,
                next_state: [tag, 0.0, 0.0, 0.0],
                done: false,
            }],
            5,
        )
        .unwrap()
    }

    fn memory(capacity: usize, per_alpha: f64) -> PrioritizedMemory {
        PrioritizedMemory::new(ReplayConfig {
            capacity,
            per_alpha,
            per_beta: 0.4,
        })
        .unwrap()
    }

    #[test]
    fn first_push_gets_unit_priority() {
        let mut m = memory(4, 0.6);
        let i = m.push(traj(0.0)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(i).unwrap().1, 1.0);
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut m = memory(2, 0.6);
        let a = m.push(traj(0.0)).unwrap();
        let b = m.push(traj(1.0)).unwrap();
        let c = m.push(traj(2.0)).unwrap();
        assert_eq!(m.len(), 2);
        assert!(matches!(m.get(a), Err(Error::State(_))));
        assert_eq!(m.get(b).unwrap().0.transitions()[0].state[0], 1.0);
        assert_eq!(m.get(c).unwrap().0.transitions()[0].state[0], 2.0);
    }

    #[test]
    fn push_uses_max_priority_seen() {
        let mut m = memory(4, 0.6);
        let a = m.push(traj(0.0)).unwrap();
        m.update_priorities(&[a], &[5.0 - PRIORITY_FLOOR]).unwrap();
        let b = m.push(traj(1.0)).unwrap();
        assert!((m.get(b).unwrap().1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_trajectory_and_empty_memory_errors() {
        assert!(matches!(Trajectory::new(vec![], 5), Err(Error::Argument(_))));
        let m = memory(4, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample(4, &mut rng), Err(Error::State(_))));
    }

    #[test]
    fn trajectory_rejects_mid_terminal_and_overlength() {
        let t = traj(0.0).transitions()[0];
        let done = Transition { done: true, ..t };
        assert!(Trajectory::new(vec![done, t], 5).is_err());
        assert!(Trajectory::new(vec![t, done], 5).is_ok());
        assert!(Trajectory::new(vec![t; 6], 5).is_err());
        let bad = Transition { action: 2, ..t };
        assert!(Trajectory::new(vec![bad], 5).is_err());
    }

    #[test]
    fn zero_losses_hit_the_floor() {
        let mut m = memory(4, 0.6);
        let a = m.push(traj(0.0)).unwrap();
        let b = m.push(traj(1.0)).unwrap();
        m.update_priorities(&[a, b], &[0.0, 0.0]).unwrap();
        assert_eq!(m.get(a).unwrap().1, 1e-6);
        assert_eq!(m.get(b).unwrap().1, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = m.sample(8, &mut rng).unwrap();
        assert!(s.weights.iter().all(|w| (*w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn high_loss_dominates_probability() {
        let mut m = memory(4, 1.0);
        let a = m.push(traj(0.0)).unwrap();
        let b = m.push(traj(1.0)).unwrap();
        m.update_priorities(&[a, b], &[4.0, 0.0]).unwrap();
        // p = (4 + 1e-6, 1e-6): P(a) = 4.000001 / 4.000002.
        let pa = m.get(a).unwrap().1 / m.total_mass();
        let pb = m.get(b).unwrap().1 / m.total_mass();
        assert!((pa - 0.99999975).abs() < 1e-9, "{pa}");
        assert!((pb - 2.5e-7).abs() < 1e-12, "{pb}");
    }

    #[test]
    fn update_rejects_negative_and_stale_without_mutation() {
        let mut m = memory(2, 0.6);
        let a = m.push(traj(0.0)).unwrap();
        let b = m.push(traj(1.0)).unwrap();
        assert!(matches!(
            m.update_priorities(&[b, a], &[0.5, -1.0]),
            Err(Error::Argument(_))
        ));
        assert_eq!(m.get(b).unwrap().1, 1.0);
        m.push(traj(2.0)).unwrap();
        assert!(matches!(
            m.update_priorities(&[b, a], &[0.5, 0.5]),
            Err(Error::State(_))
        ));
        assert_eq!(m.get(b).unwrap().1, 1.0);
    }

    #[test]
    fn sampled_indices_are_live_and_match_contents() {
        let mut m = memory(3, 0.6);
        for k in 0..7 {
            m.push(traj(k as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = m.sample(50, &mut rng).unwrap();
        for (i, t) in s.indices.iter().zip(&s.trajectories) {
            let (stored, _) = m.get(*i).unwrap();
            assert_eq!(stored, t);
            assert_eq!(stored.transitions()[0].state[0], i.0 as f64);
        }
    }

    #[test]
    fn weights_follow_probability_ratio() {
        // Priorities (3, 1, 1, 1) with alpha 1: P = (0.5, 1/6, 1/6, 1/6).
        // Raw weight of the heavy item is (1/(4·0.5))^0.4 = 0.5^0.4 ≈ 0.757858;
        // a light item's is (1.5)^0.4, the batch maximum whenever one is drawn.
        let mut m = memory(4, 1.0);
        let ids: Vec<_> = (0..4).map(|k| m.push(traj(k as f64)).unwrap()).collect();
        m.update_priorities(&ids, &[3.0, 1.0, 1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = m.sample(64, &mut rng).unwrap();
        let heavy = s.indices.iter().position(|i| *i == ids[0]).unwrap();
        assert!((s.probabilities[heavy] - 0.5).abs() < 1e-6);
        assert!((0.5f64.powf(0.4) - 0.757858).abs() < 1e-6);
        let expected = 0.5f64.powf(0.4) / 1.5f64.powf(0.4);
        assert!((s.weights[heavy] - expected).abs() < 1e-6);
        assert!(s.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
    }
}
