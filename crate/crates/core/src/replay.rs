//! Fixed-capacity prioritized replay memory.
//!
//! Priorities are stored twice: the raw value `p` (used by clipping and the
//! diagnostics) and the transformed leaf `(p + eps)^alpha` that feeds a binary
//! prefix-sum tree. Sampling is a single descent from the root, so both
//! drawing an index and rewriting a priority cost `O(log N)`.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("priority must be finite and non-negative, got {0}")]
    InvalidPriority(f64),
    #[error("slot {slot} is not occupied (memory holds {size} entries)")]
    EmptySlot { slot: usize, size: usize },
    #[error("replay memory is empty")]
    Empty,
    #[error("probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("invalid replay configuration: {0}")]
    InvalidConfig(String),
}

/// How a batch of indices is drawn from the prefix sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// K independent draws from the full distribution.
    #[default]
    Independent,
    /// One draw from each of K equal-mass segments of the prefix sums.
    Stratified,
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Prefix-sum tree over transformed priorities with ring-buffer slot allocation.
#[derive(Debug, Clone)]
pub struct PriorityTree {
    capacity: usize,
    leaf_base: usize,
    // 1-indexed heap layout: root at 1, leaves at leaf_base..leaf_base + capacity.
    nodes: Vec<f64>,
    raw: Vec<f64>,
    size: usize,
    cursor: usize,
    alpha: f64,
    epsilon: f64,
}

impl PriorityTree {
    pub fn new(capacity: usize, alpha: f64, epsilon: f64) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::InvalidConfig(
                "capacity must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ReplayError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(ReplayError::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        let leaf_base = capacity.next_power_of_two();
        Ok(Self {
            capacity,
            leaf_base,
            nodes: vec![0.0; 2 * leaf_base],
            raw: vec![0.0; capacity],
            size: 0,
            cursor: 0,
            alpha,
            epsilon,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Slot that the next insertion will write.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sum of all transformed priorities.
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Raw (untransformed) priorities of the live slots.
    pub fn raw_priorities(&self) -> &[f64] {
        &self.raw[..self.size]
    }

    pub fn raw_priority(&self, slot: usize) -> Result<f64, ReplayError> {
        self.check_slot(slot)?;
        Ok(self.raw[slot])
    }

    /// Transformed leaf value `(p + eps)^alpha` of a live slot.
    pub fn leaf(&self, slot: usize) -> Result<f64, ReplayError> {
        self.check_slot(slot)?;
        Ok(self.nodes[self.leaf_base + slot])
    }

    pub fn transform(&self, priority: f64) -> f64 {
        (priority + self.epsilon).powf(self.alpha)
    }

    /// Stores a priority at the write cursor, evicting the oldest entry when full.
    pub fn insert(&mut self, priority: f64) -> Result<usize, ReplayError> {
        check_priority(priority)?;
        let slot = self.cursor;
        self.write(slot, priority);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(slot)
    }

    pub fn update(&mut self, slot: usize, priority: f64) -> Result<(), ReplayError> {
        self.check_slot(slot)?;
        check_priority(priority)?;
        self.write(slot, priority);
        Ok(())
    }

    fn write(&mut self, slot: usize, priority: f64) {
        self.raw[slot] = priority;
        let mut idx = self.leaf_base + slot;
        self.nodes[idx] = self.transform(priority);
        // Parents are recomputed from their children rather than patched by a
        // delta, so rounding error never accumulates across updates.
        idx /= 2;
        while idx >= 1 {
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1];
            idx /= 2;
        }
    }

    fn check_slot(&self, slot: usize) -> Result<(), ReplayError> {
        if slot >= self.size {
            Err(ReplayError::EmptySlot {
                slot,
                size: self.size,
            })
        } else {
            Ok(())
        }
    }

    /// Finds the slot whose prefix-sum interval contains `mass`.
    ///
    /// Never descends into a zero-mass subtree, so the result is always a live
    /// slot with a positive leaf even when `mass` sits on a rounding boundary.
    pub fn find_prefix(&self, mass: f64) -> usize {
        let mut u = mass.max(0.0);
        let mut idx = 1;
        while idx < self.leaf_base {
            let left = 2 * idx;
            let left_sum = self.nodes[left];
            if (u < left_sum && left_sum > 0.0) || self.nodes[left + 1] <= 0.0 {
                idx = left;
            } else {
                u -= left_sum;
                idx = left + 1;
            }
        }
        idx - self.leaf_base
    }

    /// Sampling probability of a live slot.
    pub fn probability(&self, slot: usize) -> Result<f64, ReplayError> {
        Ok(self.leaf(slot)? / self.total())
    }

    /// Draws `k` slots according to the prioritized distribution.
    pub fn sample_slots<R: Rng + ?Sized>(
        &self,
        k: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.size == 0 {
            return Err(ReplayError::Empty);
        }
        let total = self.total();
        let slots = match mode {
            SamplingMode::Independent => (0..k)
                .map(|_| self.find_prefix(rng.random::<f64>() * total))
                .collect(),
            SamplingMode::Stratified => {
                let segment = total / k as f64;
                (0..k)
                    .map(|i| self.find_prefix((i as f64 + rng.random::<f64>()) * segment))
                    .collect()
            }
        };
        Ok(slots)
    }

    /// Exact sampling distribution over live slots, by a linear scan of the leaves.
    pub fn full_distribution(&self) -> Result<Vec<f64>, ReplayError> {
        if self.size == 0 {
            return Err(ReplayError::Empty);
        }
        let leaves = &self.nodes[self.leaf_base..self.leaf_base + self.size];
        let sum: f64 = leaves.iter().sum();
        Ok(leaves.iter().map(|q| q / sum).collect())
    }

    /// The `ceil(N/2)`-th smallest raw priority (lower median).
    pub fn median_raw_priority(&self) -> Result<f64, ReplayError> {
        if self.size == 0 {
            return Err(ReplayError::Empty);
        }
        let mut snapshot = self.raw_priorities().to_vec();
        let rank = self.size.div_ceil(2) - 1;
        let (_, median, _) = snapshot.select_nth_unstable_by(rank, f64::total_cmp);
        Ok(*median)
    }

    pub fn max_raw_priority(&self) -> Result<f64, ReplayError> {
        self.raw_priorities()
            .iter()
            .copied()
            .reduce(f64::max)
            .ok_or(ReplayError::Empty)
    }

    /// Rebuilds a tree from stored raw priorities (snapshot restore).
    pub fn from_raw(
        capacity: usize,
        alpha: f64,
        epsilon: f64,
        raw: &[f64],
        cursor: usize,
    ) -> Result<Self, ReplayError> {
        let mut tree = Self::new(capacity, alpha, epsilon)?;
        if raw.len() > capacity
            || cursor >= capacity
            || (raw.len() < capacity && cursor != raw.len())
        {
            return Err(ReplayError::InvalidConfig(format!(
                "inconsistent tree state: {} entries, cursor {cursor}, capacity {capacity}",
                raw.len()
            )));
        }
        for &p in raw {
            tree.insert(p)?;
        }
        tree.cursor = cursor;
        Ok(tree)
    }
}

fn check_priority(priority: f64) -> Result<(), ReplayError> {
    if priority.is_finite() && priority >= 0.0 {
        Ok(())
    } else {
        Err(ReplayError::InvalidPriority(priority))
    }
}

/// Importance-sampling weight `((N * prob)^-1)^beta`.
pub fn is_weight(prob: f64, n: usize, beta: f64) -> Result<f64, ReplayError> {
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(ReplayError::InvalidProbability(prob));
    }
    if n == 0 {
        return Err(ReplayError::Empty);
    }
    Ok((n as f64 * prob).recip().powf(beta))
}

/// A sampled batch. `is_weights` holds the un-exponentiated `(N * prob)^-1`.
#[derive(Debug, Clone)]
pub struct SampleBatch<T> {
    pub indices: Vec<usize>,
    pub experiences: Vec<T>,
    pub probabilities: Vec<f64>,
    pub is_weights: Vec<f64>,
}

impl<T> SampleBatch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Prioritized replay memory holding one item per tree slot.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    tree: PriorityTree,
    items: Vec<T>,
    mode: SamplingMode,
}

impl<T: Clone> ReplayMemory<T> {
    pub fn new(
        capacity: usize,
        alpha: f64,
        epsilon: f64,
        mode: SamplingMode,
    ) -> Result<Self, ReplayError> {
        Ok(Self {
            tree: PriorityTree::new(capacity, alpha, epsilon)?,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            mode,
        })
    }

    pub fn from_parts(
        tree: PriorityTree,
        items: Vec<T>,
        mode: SamplingMode,
    ) -> Result<Self, ReplayError> {
        if items.len() != tree.len() {
            return Err(ReplayError::InvalidConfig(format!(
                "{} items for {} priorities",
                items.len(),
                tree.len()
            )));
        }
        Ok(Self { tree, items, mode })
    }

    pub fn tree(&self) -> &PriorityTree {
        &self.tree
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    pub fn insert(&mut self, item: T, priority: f64) -> Result<usize, ReplayError> {
        let slot = self.tree.insert(priority)?;
        if slot == self.items.len() {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        Ok(slot)
    }

    pub fn update_priority(&mut self, slot: usize, priority: f64) -> Result<(), ReplayError> {
        self.tree.update(slot, priority)
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<SampleBatch<T>, ReplayError> {
        let indices = self.tree.sample_slots(k, self.mode, rng)?;
        let total = self.tree.total();
        let n = self.tree.len() as f64;
        let mut probabilities = Vec::with_capacity(k);
        let mut is_weights = Vec::with_capacity(k);
        let mut experiences = Vec::with_capacity(k);
        for &slot in &indices {
            let prob = self.tree.nodes[self.tree.leaf_base + slot] / total;
            probabilities.push(prob);
            is_weights.push((n * prob).recip());
            experiences.push(self.items[slot].clone());
        }
        Ok(SampleBatch {
            indices,
            experiences,
            probabilities,
            is_weights,
        })
    }

    pub fn full_distribution(&self) -> Result<Vec<f64>, ReplayError> {
        self.tree.full_distribution()
    }

    pub fn median_raw_priority(&self) -> Result<f64, ReplayError> {
        self.tree.median_raw_priority()
    }
}
