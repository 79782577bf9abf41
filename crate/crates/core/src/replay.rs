//! Proportional prioritized experience replay.
//!
//! Item `i` is sampled with probability `p_i^α / Σ_j p_j^α`. New items get the
//! largest priority seen so far (1.0 in an empty buffer) so that each is
//! sampled at least with good odds before its TD error is known. Importance
//! weights `(N·P(i))^(−β)` are divided by the largest weight over the whole
//! buffer, so they lie in `(0, 1]` and equal 1 at the least likely item.
//!
//! Observations are stored as shared `f32` slices: the next state of one
//! transition is the state of the following one, and at desk scale halving
//! the element width keeps a full buffer of stacked frames in memory.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to `|δ|` so that no item becomes unsampleable.
pub const PRIORITY_FLOOR: f64 = 1e-6;

/// A stored observation.
pub type Observation = Arc<[f32]>;

pub fn observation(values: &[f64]) -> Observation {
    values.iter().map(|&v| v as f32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    /// Reward as used for learning (clipped to its sign when clipping is on).
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Priority exponent.
    pub alpha: f64,
    /// Importance-sampling exponent, fixed over the run.
    pub beta: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 200_000,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "replay exponents must be finite and ≥ 0 (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Binary tree over `size` leaves holding sums and minima of leaf values.
#[derive(Debug, Clone)]
struct SumTree {
    size: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let size = capacity.next_power_of_two();
        Self {
            size,
            sum: vec![0.0; 2 * size],
            min: vec![f64::INFINITY; 2 * size],
        }
    }

    fn set(&mut self, leaf: usize, value: f64) {
        let mut i = leaf + self.size;
        self.sum[i] = value;
        self.min[i] = value;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.min[i] = self.min[2 * i].min(self.min[2 * i + 1]);
        }
    }

    fn get(&self, leaf: usize) -> f64 {
        self.sum[leaf + self.size]
    }

    fn total(&self) -> f64 {
        self.sum[1]
    }

    fn min(&self) -> f64 {
        self.min[1]
    }

    /// Leaf whose cumulative range contains `mass`, clamped to `len − 1`.
    fn find(&self, mut mass: f64, len: usize) -> usize {
        let mut i = 1;
        while i < self.size {
            let left = self.sum[2 * i];
            if mass < left {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        (i - self.size).min(len - 1)
    }
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    config: ReplayConfig,
    items: Vec<Transition>,
    next: usize,
    tree: SumTree,
    priorities: Vec<f64>,
    max_priority: f64,
}

/// A sampled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Buffer slots, for [`PrioritizedBuffer::update_priorities`].
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance weights in `(0, 1]`.
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// States as a flat `[len, dim]` buffer.
    pub fn states(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.state.iter().map(|&v| v as f64)).collect()
    }

    pub fn next_states(&self) -> Vec<f64> {
        self.transitions
            .iter()
            .flat_map(|t| t.next_state.iter().map(|&v| v as f64))
            .collect()
    }
}

impl PrioritizedBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            items: Vec::new(),
            next: 0,
            tree: SumTree::new(config.capacity),
            priorities: Vec::new(),
            max_priority: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    /// Raw priority `p_i` of a slot.
    pub fn priority(&self, index: usize) -> Result<f64> {
        self.check(index)?;
        Ok(self.priorities[index])
    }

    /// Sampling probability of a slot.
    pub fn probability(&self, index: usize) -> Result<f64> {
        self.check(index)?;
        Ok(self.tree.get(index) / self.tree.total())
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.items.len() {
            return Err(Error::Index {
                index,
                len: self.items.len(),
            });
        }
        Ok(())
    }

    fn set_priority(&mut self, index: usize, p: f64) {
        if index == self.priorities.len() {
            self.priorities.push(p);
        } else {
            self.priorities[index] = p;
        }
        self.tree.set(index, p.powf(self.config.alpha));
    }

    /// Stores a transition at the current maximum priority, evicting the
    /// oldest item when full.
    pub fn push(&mut self, transition: Transition) {
        let slot = self.next;
        if self.items.len() < self.config.capacity {
            self.items.push(transition);
        } else {
            self.items[slot] = transition;
        }
        self.set_priority(slot, self.max_priority);
        self.next = (slot + 1) % self.config.capacity;
    }

    /// Draws `batch_size` slots independently in proportion to `p^α`.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::State(format!(
                "cannot sample {batch_size} items from a buffer holding {}",
                self.items.len()
            )));
        }
        let total = self.tree.total();
        let n = self.items.len() as f64;
        let beta = self.config.beta;
        let max_weight = (n * self.tree.min() / total).powf(-beta);
        let mut batch = Batch {
            indices: Vec::with_capacity(batch_size),
            transitions: Vec::with_capacity(batch_size),
            weights: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let i = self.tree.find(rng.random::<f64>() * total, self.items.len());
            let p = self.tree.get(i) / total;
            batch.indices.push(i);
            batch.transitions.push(self.items[i].clone());
            batch.weights.push(((n * p).powf(-beta) / max_weight).min(1.0));
        }
        Ok(batch)
    }

    /// Sets `p_i = |δ_i| + PRIORITY_FLOOR`. A slot that has been overwritten
    /// since it was sampled updates its current occupant.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::dim(format!(
                "{} indices for {} TD errors",
                indices.len(),
                td_errors.len()
            )));
        }
        for &i in indices {
            self.check(i)?;
        }
        for (&i, &d) in indices.iter().zip(td_errors) {
            let p = d.abs() + PRIORITY_FLOOR;
            if !p.is_finite() {
                return Err(Error::Argument(format!("non-finite TD error {d}")));
            }
            self.max_priority = self.max_priority.max(p);
            self.set_priority(i, p);
        }
        Ok(())
    }
}
