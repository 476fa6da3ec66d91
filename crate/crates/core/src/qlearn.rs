//! Replay memory, exploration schedule and the small pieces of Q-learning
//! shared by both agents.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Scalar;

/// One step of experience. The task never terminates, so there is no done flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    /// Per-stat drive reductions.
    pub rewards: Vec<f64>,
    /// Drive reduction of the combined multi-stat drive.
    pub scalar_reward: f64,
    pub next_obs: Vec<f32>,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.next] = transition;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// `batch_size` distinct entries drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if batch_size > self.storage.len() {
            return Err(Error::InsufficientSamples {
                requested: batch_size,
                available: self.storage.len(),
            });
        }
        Ok(index::sample(rng, self.storage.len(), batch_size)
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}

/// Linear annealing of ε from `initial` at step 0 to `final_value` at
/// step `anneal_steps - 1`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub anneal_steps: usize,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, final_value: f64, anneal_steps: usize) -> Self {
        Self {
            initial,
            final_value,
            anneal_steps,
        }
    }

    pub fn epsilon_at(&self, t: usize) -> f64 {
        if self.anneal_steps <= 1 || t + 1 >= self.anneal_steps {
            return self.final_value;
        }
        let frac = t as f64 / (self.anneal_steps - 1) as f64;
        self.initial + (self.final_value - self.initial) * frac
    }
}

/// Uniform random action with probability `eps`, otherwise a greedy one
/// with ties broken uniformly.
pub fn select_epsilon_greedy<T: Scalar, R: Rng + ?Sized>(q: &[T], eps: f64, rng: &mut R) -> Result<usize> {
    if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteQ);
    }
    if rng.gen::<f64>() < eps {
        return Ok(rng.gen_range(0..q.len()));
    }
    let best = q.iter().copied().fold(T::neg_infinity(), T::max);
    let ties: Vec<usize> = (0..q.len()).filter(|&k| q[k] == best).collect();
    if ties.len() == 1 {
        Ok(ties[0])
    } else {
        Ok(ties[rng.gen_range(0..ties.len())])
    }
}

/// `reward + gamma * max_a q_next[a]`, no terminal masking.
pub fn td_target<T: Scalar>(reward: T, gamma: T, q_next: &[T]) -> T {
    let best = q_next.iter().copied().fold(T::neg_infinity(), T::max);
    reward + gamma * best
}

/// True at every positive multiple of `period`.
pub fn should_sync_target(t: usize, period: usize) -> bool {
    period > 0 && t > 0 && t.is_multiple_of(period)
}
