//! Transition records and the fixed-capacity FIFO replay buffer backing
//! both the environment and the model datasets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One (s, a, r, s', done) record. `done` marks absorbing terminal states
/// only; episode timeouts are stored as non-terminal so value bootstrapping
/// continues through them.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_state: Vec<T>,
    pub done: bool,
}

/// Ring buffer with FIFO eviction; uniform sampling covers live entries only.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    data: Vec<Transition<T>>,
    next: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "capacity must be at least 1");
        Self {
            capacity,
            data: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Entry `i` in logical order, 0 = oldest live entry.
    pub fn get(&self, i: usize) -> &Transition<T> {
        assert!(i < self.data.len());
        if self.data.len() < self.capacity {
            &self.data[i]
        } else {
            &self.data[(self.next + i) % self.capacity]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Transition<T>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(self.get(rng.gen_range(0..self.len())))
    }

    pub fn clear(&mut self) {
        self.data.clear();
        self.next = 0;
    }
}
